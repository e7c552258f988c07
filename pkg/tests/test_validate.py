from __future__ import annotations

import csv
import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from ccerco.dispatch import _injection_terms
from ccerco.grid import case_from_dict, compute_ptdf, compute_sensitivities
from ccerco.scenarios import ScenarioSet, capped_deviations, sample_gaussian
from ccerco.validate import cost_report, monte_carlo_violation, realized_flows, write_traces

N = 10000


def test_zero_deviations_never_violate(pjm_m1, pjm, pjm_sens):
    zero = ScenarioSet(np.zeros((100, 1)), {"seed": 5})
    rep = monte_carlo_violation(pjm_m1, pjm, pjm_sens, zero)
    assert rep.max_violation == 0.0
    assert rep.n == 100 and rep.seed == 5


def test_gaussian_tail_oracle(pjm_m1, pjm, pjm_sens):
    # with the cap far above the samples the response of generator g is
    # -beta_g dW, so P(response > r) = Phi(-r / (beta_g sigma))
    g = 4
    beta = pjm_sens.beta[g]
    r = 1.2 * beta * 200.0
    r_up = pjm_m1.r_up.copy()
    r_up[g] = r
    sol = dataclasses.replace(pjm_m1, r_up=r_up)
    s = sample_gaussian(N, [0.0], [200.0], seed=21)
    rep = monte_carlo_violation(sol, pjm, pjm_sens, s)
    p = norm.cdf(-1.2)
    assert abs(rep.gen_up[g] - p) <= 3 * np.sqrt(p * (1 - p) / N)


def test_flows_match_solver_matrices(pjm_m0, pjm, pjm_sens, pjm_validate):
    flows, response, capped = realized_flows(pjm, pjm_sens, pjm_m0, pjm_validate)
    # model-side flow: scheduled flow from the program's injection terms plus K times the capped deviation
    a_p, pf0 = _injection_terms(pjm, compute_ptdf(pjm))
    model = (a_p @ pjm_m0.p_sc + pf0)[None, :] + capped @ pjm_sens.k_matrix.T
    assert np.max(np.abs(flows - model)) <= 1e-9
    np.testing.assert_allclose(response.sum(axis=1) + capped.sum(axis=1), 0.0, atol=1e-9)


def test_report_fields(pjm_m0, pjm, pjm_sens, pjm_validate, tmp_path):
    rep = monte_carlo_violation(pjm_m0, pjm, pjm_sens, pjm_validate, training_seed=1)
    assert not rep.warnings
    assert rep.max_transmission == max(rep.line_max.max(), rep.line_min.max())
    assert rep.max_generation == max(rep.gen_up.max(), rep.gen_dn.max())
    for arr in (rep.line_max, rep.line_min, rep.gen_up, rep.gen_dn):
        assert np.all((arr >= 0) & (arr <= 1))
    rep.save(tmp_path / "v.json")
    d = json.loads((tmp_path / "v.json").read_text())
    assert d["seed"] == 2 and d["training_seed"] == 1 and len(d["lines"]) == 6


def test_seed_collision_warns(pjm_m0, pjm, pjm_sens, pjm_train):
    rep = monte_carlo_violation(pjm_m0, pjm, pjm_sens, pjm_train, training_seed=1)
    assert rep.warnings and "in-sample" in rep.warnings[0]


def test_traces(pjm_m0, pjm, pjm_sens, pjm_validate, tmp_path):
    rep = monte_carlo_violation(pjm_m0, pjm, pjm_sens, pjm_validate, keep_traces=True)
    path = tmp_path / "t.csv"
    write_traces(rep, pjm, path, lines=[6], gens=[2])
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["scenario", "line_6_flow_mw", "gen_2_output_mw"]
    assert len(rows) == N + 1
    assert float(rows[1][1]) == rep.flows[0, pjm.line_index(6)]
    bare = monte_carlo_violation(pjm_m0, pjm, pjm_sens, pjm_validate)
    with pytest.raises(ValueError):
        write_traces(bare, pjm, path, lines=[6])


def test_frequency_consistency_when_doubling(pjm_m1, pjm, pjm_sens):
    # the first N rows of a 2N draw are the N-row draw (same stream, extended)
    np.testing.assert_array_equal(sample_gaussian(2 * 500, [0], [200], 3).deviations[:500],
                                  sample_gaussian(500, [0], [200], 3).deviations)
    ok = 0
    trials = 100
    for seed in range(100, 100 + trials):
        half = monte_carlo_violation(pjm_m1, pjm, pjm_sens, sample_gaussian(2000, [0], [200], seed))
        full = monte_carlo_violation(pjm_m1, pjm, pjm_sens, sample_gaussian(4000, [0], [200], seed))
        a = np.concatenate([half.line_max, half.line_min, half.gen_up, half.gen_dn])
        b = np.concatenate([full.line_max, full.line_min, full.gen_up, full.gen_dn])
        bound = 3 * np.sqrt(b * (1 - b) / 2000) + 1e-12
        ok += bool(np.all(np.abs(a - b) <= bound))
    assert ok >= 0.99 * trials


def test_partition_invariance(pjm_m0, pjm, pjm_sens, pjm_validate):
    flows, _, _ = realized_flows(pjm, pjm_sens, pjm_m0, pjm_validate)
    parts = [realized_flows(pjm, pjm_sens, pjm_m0, ScenarioSet(chunk))[0]
             for chunk in np.array_split(pjm_validate.deviations, 5)]
    np.testing.assert_array_equal(np.concatenate(parts), flows)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_frequencies_are_probabilities(pjm_m1, pjm, pjm_sens, up_scale, dn_scale):
    sol = dataclasses.replace(pjm_m1, r_up=pjm_m1.r_up * up_scale, r_dn=pjm_m1.r_dn * dn_scale)
    rep = monte_carlo_violation(sol, pjm, pjm_sens, sample_gaussian(500, [0], [200], 8))
    stacked = np.concatenate([rep.line_max, rep.line_min, rep.gen_up, rep.gen_dn])
    assert np.all((stacked >= 0) & (stacked <= 1))
    assert rep.max_violation == stacked.max()


def test_cost_report_two_generator_toy():
    case = case_from_dict({
        "slack_bus": 1,
        "buses": [{"id": 1, "demand": 0.0}, {"id": 2, "demand": 600.0}],
        "lines": [{"id": 1, "from": 1, "to": 2, "x": 0.1, "limit": 900.0}],
        "generators": [
            {"id": 1, "bus": 1, "p_min": 0.0, "p_max": 500.0, "cost_energy": 10.0, "cost_reserve": 2.0},
            {"id": 2, "bus": 2, "p_min": 0.0, "p_max": 500.0, "cost_energy": 50.0, "cost_reserve": 10.0},
        ],
        "wind_farms": [{"id": 1, "bus": 2, "forecast": 100.0, "capacity": 400.0,
                        "deviation_mean": 0.0, "deviation_std": 20.0}],
    })
    sens = compute_sensitivities(case)

    class Sol:  # minimal stand-in carrying only what the report reads
        p_sc = np.array([200.0, 300.0])
        r_up = np.array([10.0, 20.0])
        r_dn = np.array([5.0, 0.0])
        mu = np.array([-4.0])

    # expected outputs 202 and 302; energy 10*202 + 50*302; reserve 2*15 + 10*20
    cb = cost_report(Sol(), case, sens)
    assert cb.energy == pytest.approx(17120.0, abs=1e-9)
    assert cb.reserve == pytest.approx(230.0, abs=1e-12)
    assert cb.total == pytest.approx(17350.0, abs=1e-9)
    assert (cb.total_up, cb.total_dn) == (30.0, 5.0)
    Sol.r_up = np.zeros(2)
    Sol.r_dn = np.zeros(2)
    assert cost_report(Sol(), case, sens).reserve == 0.0


def test_cost_report_matches_solution(pjm_m0, pjm_m1, pjm, pjm_sens):
    for sol in (pjm_m0, pjm_m1):
        cb = cost_report(sol, pjm, pjm_sens)
        assert cb.total == pytest.approx(sol.total_cost, rel=1e-12)
        assert cb.total == pytest.approx(cb.energy + cb.reserve, rel=1e-12)
        assert [r[0] for r in cb.rows()] == [r[0] for r in sol.summary_rows()]
    assert cost_report(pjm_m0, pjm, pjm_sens).reserve < cost_report(pjm_m1, pjm, pjm_sens).reserve


def test_capped_response_in_validation(pjm_m0, pjm, pjm_sens, pjm_validate):
    _, response, capped = realized_flows(pjm, pjm_sens, pjm_m0, pjm_validate)
    np.testing.assert_array_equal(capped, capped_deviations(pjm_validate, pjm_m0.wc, pjm.w_fc))
    assert capped.max() <= pjm_m0.wc[0] - pjm.w_fc[0]
