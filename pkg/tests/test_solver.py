from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccerco.solver import (
    SOC,
    ConicProgram,
    ProgramBuilder,
    check_solution,
    dump_program,
    solve_convex,
    solve_misocp,
)

from oracles import convex_suite, mixed_suite, random_lp, vertex_enumeration


def rel(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(b))


def test_fixed_cone():
    sol = solve_convex(ConicProgram(c=[1.0], cones=[SOC(np.zeros((2, 1)), [1.0, 1.0], [1.0], 0.0)]))
    assert sol.ok and sol.objective == pytest.approx(np.sqrt(2), rel=1e-8)


def test_two_cuts():
    sol = solve_convex(ConicProgram(c=[1.0], G=[[-1.0], [-1.0]], h=[-3.0, -5.0]))
    assert sol.ok and sol.objective == pytest.approx(5.0, rel=1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_random_lp_vertex_enumeration(seed):
    prog = random_lp(seed, n=3 + seed % 3, m=6 + seed % 4)
    sol = solve_convex(prog)
    assert sol.ok
    assert rel(sol.objective, vertex_enumeration(prog)) <= 1e-6
    assert check_solution(prog, sol.x).max <= 1e-7


@pytest.mark.parametrize("name, prog, ref", convex_suite(), ids=lambda v: v if isinstance(v, str) else "")
def test_convex_suite_residuals(name, prog, ref):
    sol = solve_convex(prog)
    assert sol.ok, sol.status
    assert rel(sol.objective, ref) <= 1e-6
    assert check_solution(prog, sol.x).max <= 1e-7


@pytest.mark.parametrize("name, prog, ref", convex_suite(), ids=lambda v: v if isinstance(v, str) else "")
def test_weak_duality_every_iterate(name, prog, ref):
    # on infeasible iterates the gap is bounded below by the residual term
    sol = solve_convex(prog)
    for pcost, dcost, _, pres, dres, slack in sol.info["history"]:
        assert pcost - dcost >= -slack - 1e-8 * max(1.0, abs(pcost))
        if pres <= 1e-8 and dres <= 1e-8:
            assert pcost >= dcost - 1e-8 * max(1.0, abs(pcost))


def test_infeasible_detected():
    sol = solve_convex(ConicProgram(c=[1.0, 0.0], G=[[1.0, 0.0], [-1.0, 0.0]], h=[1.0, -2.0]))
    assert sol.status == "infeasible"
    sol = solve_convex(ConicProgram(c=[1.0], lb=[3.0], ub=[1.0]))
    assert sol.status == "infeasible"


def test_unbounded_detected():
    sol = solve_convex(ConicProgram(c=[-1.0, 0.0], G=[[0.0, 1.0]], h=[1.0]))
    assert sol.status == "unbounded"


def test_equality_duals_reported():
    # min x1 + 2 x2 s.t. x1 + x2 = 1, x >= 0: dual of the equality is -1 (or 1 by sign)
    sol = solve_convex(ConicProgram(c=[1.0, 2.0], A_eq=[[1.0, 1.0]], b_eq=[1.0], lb=[0.0, 0.0]))
    assert sol.ok
    np.testing.assert_allclose(sol.x, [1.0, 0.0], atol=1e-7)
    assert abs(sol.y[0]) == pytest.approx(1.0, rel=1e-6)


def test_presolve_fixed_variables():
    prog = ConicProgram(c=[1.0, 1.0], lb=[2.0, 0.0], ub=[2.0, 5.0], G=[[-1.0, -1.0]], h=[-3.0])
    sol = solve_convex(prog)
    assert sol.ok and sol.objective == pytest.approx(3.0, rel=1e-8)
    assert sol.x[0] == 2.0


def test_check_solution_names_violated_cone():
    prog = ConicProgram(c=[0.0, 0.0], cones=[SOC(np.eye(2), [0.0, 0.0], [0.0, 0.0], 1.0, name="disc")])
    ok = check_solution(prog, np.array([0.6, 0.0]))
    assert ok.max == 0.0
    bad = check_solution(prog, np.array([1.1, 0.0]))
    assert bad.worst == "disc"
    assert bad.cone_residuals["disc"] == pytest.approx(0.1)
    with pytest.raises(ValueError):
        check_solution(prog, np.zeros(3))


def test_program_validation():
    with pytest.raises(ValueError):
        ConicProgram(c=[1.0, 1.0], G=[[1.0]], h=[1.0])
    with pytest.raises(ValueError):
        ConicProgram(c=[1.0], binaries=[3])
    with pytest.raises(ValueError):
        SOC(np.zeros((0, 2)), [], [0.0, 0.0])


def test_misocp_relaxation_integral_one_node():
    prog = ConicProgram(c=[1.0, 1.0], G=[[-1.0, 0.0]], h=[-1.0], lb=[0.0, 0.0], ub=[1.0, 1.0], binaries=[0, 1])
    sol = solve_misocp(prog)
    assert sol.ok and sol.nodes == 1
    assert sol.objective == pytest.approx(solve_convex(prog.relaxation()).objective, rel=1e-9)


def test_misocp_two_binary_toy():
    prog = ConicProgram(c=[-1.0, -1.0], G=[[1.0, 1.0]], h=[1.0], lb=[0, 0], ub=[1, 1], binaries=[0, 1])
    sol = solve_misocp(prog)
    assert sol.ok and sol.objective == pytest.approx(-1.0, abs=1e-7)
    assert set(np.round(sol.x).tolist()) == {0.0, 1.0}


def _knapsack_with_cone(seed: int):
    rng = np.random.default_rng(seed)
    k = 6
    value = rng.uniform(1, 5, k)
    weight = rng.uniform(1, 4, k)
    # variables z (binary), t >= ||diag(weight) z||: a risk penalty on chosen items
    c = np.concatenate([-value, [1.5]])
    A = np.hstack([np.diag(weight), np.zeros((k, 1))])
    top = np.zeros(k + 1)
    top[-1] = 1.0
    prog = ConicProgram(
        c=c, G=np.concatenate([weight, [0.0]])[None, :], h=[0.5 * weight.sum()],
        cones=[SOC(A, np.zeros(k), top, 0.0)],
        lb=np.zeros(k + 1), ub=np.concatenate([np.ones(k), [np.inf]]), binaries=np.arange(k),
    )
    best = np.inf
    for z in itertools.product((0.0, 1.0), repeat=k):
        z = np.array(z)
        if weight @ z <= 0.5 * weight.sum():
            fixed = prog.with_bounds(np.concatenate([z, [0.0]]), np.concatenate([z, [np.inf]]))
            s = solve_convex(fixed.relaxation())
            if s.ok:
                best = min(best, s.objective)
    return prog, best


@pytest.mark.parametrize("seed", range(3))
def test_knapsack_with_cone_matches_enumeration(seed):
    prog, best = _knapsack_with_cone(seed)
    sol = solve_misocp(prog)
    assert sol.ok
    assert rel(sol.objective, best) <= 1e-6
    assert sol.info["bound_violations"] == 0


@pytest.mark.parametrize("name, prog, ref", mixed_suite(), ids=lambda v: v if isinstance(v, str) else "")
def test_mixed_suite(name, prog, ref):
    sol = solve_misocp(prog)
    assert sol.ok
    assert rel(sol.objective, ref) <= 1e-6
    assert sol.gap <= 1e-6
    assert check_solution(prog, sol.x).max <= 1e-6
    assert sol.info["bound_violations"] == 0


def test_misocp_infeasible():
    prog = ConicProgram(c=[1.0, 1.0], G=[[-1.0, -1.0]], h=[-3.0], lb=[0, 0], ub=[1, 1], binaries=[0, 1])
    assert solve_misocp(prog).status == "infeasible"


def test_misocp_node_limit_reports_incumbent():
    prog, _ = _knapsack_with_cone(1)
    sol = solve_misocp(prog, node_limit=1, rounding=None)
    assert sol.status in ("node_limit", "optimal")
    assert sol.nodes <= 1


def test_determinism():
    name, prog, _ = mixed_suite()[5]
    a = solve_misocp(prog)
    b = solve_misocp(prog)
    assert a.status == b.status
    assert abs(a.objective - b.objective) <= 1e-12
    c1 = solve_convex(random_lp(3))
    c2 = solve_convex(random_lp(3))
    assert abs(c1.objective - c2.objective) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_scaling_robustness(seed):
    prog = random_lp(seed, n=4, m=8)
    base = solve_convex(prog)
    scaled = solve_convex(ConicProgram(c=prog.c * 1e3, G=prog.G, h=prog.h, lb=prog.lb, ub=prog.ub))
    assert base.ok and scaled.ok
    assert rel(scaled.objective / 1e3, base.objective) <= 1e-6


def test_builder_and_dump(tmp_path):
    b = ProgramBuilder()
    x = b.add_vars("x", 2, lb=0.0)
    t = b.add_vars("t", 1)
    b.add_cost({int(t[0]): 1.0})
    b.add_eq({int(x[0]): 1.0, int(x[1]): 1.0}, 2.0, "sum")
    b.add_soc([{int(x[0]): 1.0}, {int(x[1]): 1.0}], [0.0, 0.0], {int(t[0]): 1.0}, name="norm")
    prog = b.build()
    sol = solve_convex(prog)
    assert sol.objective == pytest.approx(np.sqrt(2), rel=1e-7)
    path = tmp_path / "p.txt"
    dump_program(prog, path)
    text = path.read_text()
    for head in ("VARS", "OBJ", "EQ", "LE", "SOC", "sum:", "norm:"):
        assert head in text
