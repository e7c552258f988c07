from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccerco.gp import (
    GpFitError,
    GpModel,
    PwlFunction,
    SurrogateBundle,
    build_bundle,
    constraint_labels,
    gamma0,
    gen_kappa_samples,
    gen_moment_samples,
    gp_fit,
    gp_predict,
    kernel_eval,
    pwl_approximate,
    rough_margins,
)
from ccerco.grid import case_from_dict, compute_sensitivities
from ccerco.scenarios import ScenarioSet, empirical_margin, sample_gaussian, truncated_stats

from conftest import small_case


def test_kernel_examples():
    se = {"tau": 2.0, "length": 3.0}
    assert kernel_eval("se", se, [1.5], [1.5])[0, 0] == pytest.approx(4.0)
    assert kernel_eval("se", se, [0.0], [1e3])[0, 0] < 1e-100
    lin = {"length": 2.0}
    assert kernel_eval("linear", lin, [[2.0, 0.0]], [[0.0, 3.0]])[0, 0] == 0.0
    assert kernel_eval("linear", lin, [[2.0, 1.0]], [[4.0, 3.0]])[0, 0] == pytest.approx(11 / 4)
    # direct formula
    v = kernel_eval("se", se, [[1.0, 2.0]], [[2.0, 4.0]])[0, 0]
    assert v == pytest.approx(4.0 * math.exp(-5.0 / 18.0))
    for bad in ({"tau": 1.0, "length": 0.0}, {"tau": 1.0, "length": -1.0}):
        with pytest.raises(ValueError):
            kernel_eval("se", bad, [0.0], [0.0])
    with pytest.raises(ValueError):
        kernel_eval("linear", {"length": 0.0}, [0.0], [0.0])


def test_gp_fit_input_checks():
    with pytest.raises(ValueError):
        gp_fit([1.0], [2.0])
    with pytest.raises(ValueError):
        gp_fit([1.0, 2.0], [1.0, np.nan])


def test_gp_two_points_interpolate():
    m = gp_fit([200.0, 400.0], [1.0, -2.0], "se")
    np.testing.assert_allclose(gp_predict(m, [200.0, 400.0]), [1.0, -2.0], atol=10 * 1e-10 * 4 + 1e-9)


def test_gp_zero_targets():
    m = gp_fit(np.linspace(0, 10, 6), np.zeros(6), "se")
    assert np.all(m.alpha == 0)
    assert np.all(gp_predict(m, np.linspace(-5, 15, 30)) == 0)


def test_linear_kernel_reproduces_linear_function():
    x = np.linspace(200.0, 1200.0, 21)
    y = 3.0 * x / 7.0
    m = gp_fit(x, y, "linear")
    grid = np.linspace(200.0, 1200.0, 101)
    np.testing.assert_allclose(gp_predict(m, grid), 3.0 * grid / 7.0, rtol=0, atol=1e-6)


def test_linear_kernel_collapse_identity():
    rng = np.random.default_rng(3)
    X = rng.uniform(200, 500, (40, 4))
    y = X @ np.array([0.1, -0.3, 0.02, 0.5]) + rng.normal(0, 1, 40)
    m = gp_fit(X, y, "linear")
    w = m.affine_weights()
    q = rng.uniform(100, 600, (100, 4))
    pred = gp_predict(m, q)
    np.testing.assert_allclose(pred, q @ w, rtol=1e-10, atol=1e-10 * np.abs(pred).max())
    with pytest.raises(ValueError):
        gp_fit(X[:, 0], y, "se").affine_weights()


def test_se_prediction_matches_direct_sum():
    x = np.array([-2.0, -1.0, 1.0, 2.0])
    y = np.array([4.0, 1.0, 1.0, 4.0])
    m = gp_fit(x, y, "se")
    tau, ell = m.params["tau"], m.params["length"]
    direct = sum(a * tau ** 2 * math.exp(-(xk - 0.0) ** 2 / (2 * ell ** 2)) for a, xk in zip(m.alpha, x))
    assert gp_predict(m, 0.0) == pytest.approx(direct, rel=1e-12)


def test_gp_hull_flag():
    m = gp_fit([0.0, 1.0, 2.0], [0.0, 1.0, 4.0], "se")
    _, inside = gp_predict(m, [0.5, 3.0], with_flag=True)
    assert inside.tolist() == [True, False]


def test_gp_model_round_trip():
    m = gp_fit([0.0, 1.0, 2.0], [0.0, 1.0, 4.0], "se")
    again = GpModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(gp_predict(again, [0.3, 1.7]), gp_predict(m, [0.3, 1.7]))


def test_gp_interpolation_on_moment_curves(pjm, pjm_train):
    ms = gen_moment_samples(pjm_train, pjm)
    for y in (ms.mu[0], ms.sigma[0]):
        m = gp_fit(ms.caps[0], y, "se", jitter=1e-10)
        err = np.max(np.abs(gp_predict(m, ms.caps[0]) - y))
        assert err <= 1e-4 * np.max(np.abs(y))


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 15), st.floats(0.5, 5.0), st.integers(0, 10_000))
def test_gp_interpolation_property(k, freq, seed):
    x = np.linspace(0.0, 10.0, k)
    y = np.sin(freq * x / 10.0) + 0.1 * np.random.default_rng(seed).normal(size=k)
    m = gp_fit(x, y, "se", jitter=1e-8)
    assert np.max(np.abs(gp_predict(m, x) - y)) <= 1e-4 * np.max(np.abs(y))


def test_pwl_function_checks():
    f = PwlFunction([0.0, 1.0, 3.0], [0.0, 2.0, 0.0])
    assert f.segments == 2 and f.domain == (0.0, 3.0)
    assert f(2.0) == 1.0
    with pytest.raises(ValueError, match="outside"):
        f(3.5)
    with pytest.raises(ValueError):
        PwlFunction([0.0, 0.0], [1.0, 2.0])
    assert PwlFunction.from_dict(f.to_dict())(0.5) == 1.0


def test_pwl_single_segment_on_linear():
    pwl, _ = pwl_approximate(lambda v: 2.0 * np.asarray(v) - 1.0, 200.0, 1200.0, 1)
    assert pwl(200.0) == 399.0 and pwl(1200.0) == 2399.0
    assert pwl.max_error < 1e-9


def test_pwl_floor_reports_clip():
    pwl, clipped = pwl_approximate(lambda v: np.asarray(v) - 0.5, 0.0, 1.0, 2, floor=0.0)
    assert clipped == pytest.approx(0.5)
    assert np.all(pwl.y >= 0)


def test_pwl_error_decreases_with_segments(pjm_bundle):
    g = pjm_bundle.mu_gp[0]
    lo, hi = pjm_bundle.w_fc[0], pjm_bundle.w_max[0]
    errs = [pwl_approximate(lambda v: gp_predict(g, v), lo, hi, s)[0].max_error for s in (1, 2, 4, 8, 16, 32)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_gamma0_rules():
    assert gamma0(0.05) == pytest.approx(1.6448536269514722, abs=1e-12)
    assert gamma0(0.05, "cantelli") == pytest.approx(4.358898943540674, abs=1e-12)
    with pytest.raises(ValueError):
        gamma0(0.5)
    with pytest.raises(ValueError):
        gamma0(0.05, "chebyshev")


def test_moment_grid_arithmetic(pjm, pjm_train):
    two = gen_moment_samples(pjm_train, pjm, wc0=200.0, t_wc=1000.0)
    np.testing.assert_array_equal(two.caps[0], [200.0, 1200.0])
    odd = gen_moment_samples(pjm_train, pjm, wc0=200.0, t_wc=300.0)
    assert odd.caps[0][-1] <= pjm.w_max[0] < odd.caps[0][-1] + 300.0
    with pytest.raises(ValueError, match="empty cap grid"):
        gen_moment_samples(pjm_train, pjm, wc0=1300.0)
    with pytest.raises(ValueError):
        gen_moment_samples(pjm_train, pjm, t_wc=0.0)


def test_moment_at_max_cap_is_untruncated(pjm, pjm_train):
    ms = gen_moment_samples(pjm_train, pjm)
    assert len(ms.caps[0]) == 21
    assert pjm_train.deviations.max() < pjm.w_max[0] - pjm.w_fc[0]
    raw = truncated_stats(pjm_train, [np.inf], pjm.w_fc)
    assert ms.mu[0][-1] == pytest.approx(raw.mu[0], abs=1e-12)
    assert ms.sigma[0][-1] == pytest.approx(raw.sigma[0], abs=1e-12)
    assert np.all(np.diff(ms.mu[0]) >= 0)


def test_kappa_zero_for_degenerate_scenarios(pjm, pjm_sens):
    zero = ScenarioSet(np.zeros((100, 1)))
    ms = gen_moment_samples(zero, pjm)
    ks = gen_kappa_samples(zero, pjm, pjm_sens, ms, gamma0(0.05), 0.05)
    assert np.all(ks.kappa == 0) and np.all(ks.um == 0) and np.all(ks.rough == 0)


def test_kappa_monte_carlo_oracle(pjm, pjm_sens):
    # oracle: with 1e5 Gaussian draws and no truncation the empirical 95%
    # quantile of K dW is close to mu_K + 1.645 |K| sd, so kappa is a small
    # fraction of the spread
    s = sample_gaussian(100_000, [0.0], [200.0], seed=7)
    ms = gen_moment_samples(s, pjm, wc0=1200.0)
    ks = gen_kappa_samples(s, pjm, pjm_sens, ms, gamma0(0.05), 0.05)
    k = pjm_sens.k_matrix[:, 0]
    dw = np.sort(s.deviations[:, 0])
    for l in range(pjm.n_lines):
        vals = k[l] * dw
        q = np.sort(vals)[-5000]
        expect = q - k[l] * dw.mean() - gamma0(0.05) * abs(k[l]) * dw.std(ddof=1)
        assert ks.kappa[0, l] == pytest.approx(expect, abs=1e-9)
        assert abs(ks.kappa[0, l]) <= 0.03 * abs(k[l]) * 200.0


def test_two_stage_identity_pjm(pjm_bundle, pjm, pjm_sens, pjm_train):
    ms = gen_moment_samples(pjm_train, pjm)
    ks = gen_kappa_samples(pjm_train, pjm, pjm_sens, ms, pjm_bundle.gamma0, 0.05)
    for k, wc in enumerate(ks.caps):
        rough = rough_margins(ks.mu[k], ks.sigma[k], pjm_sens, ks.gamma0)
        um = np.concatenate([
            [empirical_margin(v, 0.05, "upper") for v in (pjm_sens.k_matrix @ np.minimum(
                pjm_train.deviations, wc - pjm.w_fc).T)],
        ])
        np.testing.assert_allclose(rough[: pjm.n_lines] + ks.kappa[k, : pjm.n_lines], um, atol=1e-9)
        np.testing.assert_allclose(rough + ks.kappa[k], ks.um[k], atol=1e-9)


def test_bundle_structure(pjm_bundle, pjm):
    assert len(pjm_bundle.mu_pwl) == 1 and len(pjm_bundle.sigma_pwl) == 1
    assert pjm_bundle.n_constraints == 2 * 6 + 2 * 5 == 22
    assert pjm_bundle.labels == constraint_labels(pjm)
    assert pjm_bundle.gamma0 == pytest.approx(1.6449, abs=1e-4)
    assert pjm_bundle.mu_pwl[0].domain == (200.0, 1200.0)
    assert pjm_bundle.mu_pwl[0].segments == 10
    assert pjm_bundle.meta["identity_residual"] <= 1e-9
    assert np.all(pjm_bundle.sigma_pwl[0].y >= 0)
    assert max(pjm_bundle.meta["sigma_clip"]) <= 1e-6 * 200
    pjm_bundle.check_case(pjm)


def test_bundle_round_trip(tmp_path, pjm_bundle):
    path = tmp_path / "b.json"
    pjm_bundle.save(path)
    again = SurrogateBundle.load(path)
    wc = np.array([437.0])
    np.testing.assert_array_equal(again.kappa(wc), pjm_bundle.kappa(wc))
    np.testing.assert_array_equal(again.mu_at(wc), pjm_bundle.mu_at(wc))
    again.save(tmp_path / "c.json")
    assert (tmp_path / "c.json").read_bytes() == path.read_bytes()


def test_bundle_affine_kappa_matches_linear_gp(pjm_bundle):
    rng = np.random.default_rng(0)
    for c in range(pjm_bundle.n_constraints):
        m = gp_fit(pjm_bundle.kappa_caps, pjm_bundle.kappa_values[:, c], "linear")
        q = rng.uniform(200, 1200, (100, 1))
        np.testing.assert_allclose(gp_predict(m, q), q @ pjm_bundle.kappa_coef[c], rtol=1e-10,
                                   atol=1e-10 * max(1.0, np.abs(q @ pjm_bundle.kappa_coef[c]).max()))


def test_bundle_zero_sigma(pjm, pjm_sens):
    zero = ScenarioSet(np.zeros((40, 1)))
    ms = gen_moment_samples(zero, pjm)
    ks = gen_kappa_samples(zero, pjm, pjm_sens, ms, gamma0(0.05), 0.05)
    b = build_bundle(pjm, ms, ks, 0.05)
    assert np.all(b.kappa_coef == 0)
    assert np.all(b.sigma_pwl[0].y == 0)


def test_bundle_case_mismatch(pjm_bundle, ieee118):
    with pytest.raises(ValueError):
        pjm_bundle.check_case(ieee118)


def test_multi_farm_kappa_grid_has_lhs_points():
    data = small_case()
    data["wind_farms"].append({"id": 2, "bus": 3, "forecast": 20.0, "capacity": 80.0,
                               "deviation_mean": 0.0, "deviation_std": 10.0})
    case = case_from_dict(data)
    sens = compute_sensitivities(case)
    s = sample_gaussian(400, [0, 0], [20, 10], seed=3)
    ms = gen_moment_samples(s, case, steps=4)
    ks = gen_kappa_samples(s, case, sens, ms, gamma0(0.05), 0.05, n_lhs=16, seed=0)
    assert ks.caps.shape == (5 + 16, 2)
    assert np.all(ks.caps >= case.w_fc - 1e-12) and np.all(ks.caps <= case.w_max + 1e-12)
    b = build_bundle(case, ms, ks, 0.05)
    assert b.kappa_coef.shape == (2 * 3 + 2 * 2, 2)


def test_gp_fit_error_is_runtime_error():
    assert issubclass(GpFitError, RuntimeError)
