"""Independent reference solutions used by the solver and acceptance tests."""

from __future__ import annotations

import itertools

import numpy as np

from ccerco.solver import SOC, ConicProgram


def random_lp(seed: int, n: int = 4, m: int = 8) -> ConicProgram:
    """Bounded, feasible LP: box [-5, 5]^n plus m random cuts through a known interior point."""
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(m, n))
    x0 = rng.uniform(-1, 1, n)
    h = G @ x0 + rng.uniform(0.2, 2.0, m)
    c = rng.normal(size=n)
    return ConicProgram(c=c, G=G, h=h, lb=np.full(n, -5.0), ub=np.full(n, 5.0))


def vertex_enumeration(prog: ConicProgram) -> float:
    """Minimum of ``c.x`` over all basic feasible solutions of ``G x <= h`` with finite bounds."""
    n = prog.n
    rows = [prog.G, np.eye(n), -np.eye(n)]
    rhs = [prog.h, prog.ub, -prog.lb]
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    best = np.inf
    for idx in itertools.combinations(range(A.shape[0]), n):
        sub = A[list(idx)]
        if abs(np.linalg.det(sub)) < 1e-10:
            continue
        x = np.linalg.solve(sub, b[list(idx)])
        if np.all(A @ x <= b + 1e-9):
            best = min(best, float(prog.c @ x))
    return best


def ball_program(seed: int, n: int) -> tuple[ConicProgram, float]:
    """min c.x s.t. ||x - a|| <= r; optimum c.a - r ||c||."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=n)
    c = rng.normal(size=n)
    r = rng.uniform(0.5, 3.0)
    prog = ConicProgram(c=c, cones=[SOC(np.eye(n), -a, np.zeros(n), r, name="ball")])
    return prog, float(c @ a - r * np.linalg.norm(c))


def affine_distance_program(seed: int, n: int = 5, m: int = 2) -> tuple[ConicProgram, float]:
    """min t s.t. ||x - p|| <= t, A x = b; optimum is the distance from p to the affine set."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, n))
    b = rng.normal(size=m)
    p = rng.normal(size=n)
    dist = float(np.linalg.norm(np.linalg.pinv(A) @ (A @ p - b)))
    # variables (x, t)
    cone_a = np.hstack([np.eye(n), np.zeros((n, 1))])
    top = np.zeros(n + 1)
    top[-1] = 1.0
    c = top.copy()
    prog = ConicProgram(c=c, A_eq=np.hstack([A, np.zeros((m, 1))]), b_eq=b,
                        cones=[SOC(cone_a, -p, top, 0.0, name="dist")])
    return prog, dist


def simplex_program(seed: int, n: int = 6) -> tuple[ConicProgram, float]:
    """min c.x over the probability simplex; optimum min(c)."""
    c = np.random.default_rng(seed).normal(size=n)
    prog = ConicProgram(c=c, A_eq=np.ones((1, n)), b_eq=[1.0], lb=np.zeros(n))
    return prog, float(c.min())


def fixed_cone_program() -> tuple[ConicProgram, float]:
    """min t s.t. ||(1, 1)|| <= t."""
    return ConicProgram(c=[1.0], cones=[SOC(np.zeros((2, 1)), [1.0, 1.0], [1.0], 0.0)]), float(np.sqrt(2.0))


def two_cuts_program() -> tuple[ConicProgram, float]:
    """min x s.t. x >= 3, x >= 5."""
    return ConicProgram(c=[1.0], G=[[-1.0], [-1.0]], h=[-3.0, -5.0]), 5.0


def convex_suite() -> list[tuple[str, ConicProgram, float]]:
    """25 convex programs with analytic or enumerated optima."""
    out = []
    for s in range(10):
        prog = random_lp(s, n=3 + s % 3, m=6 + s % 4)
        out.append((f"lp{s}", prog, vertex_enumeration(prog)))
    for s in range(5):
        prog, ref = ball_program(100 + s, 2 + s)
        out.append((f"ball{s}", prog, ref))
    for s in range(5):
        prog, ref = affine_distance_program(200 + s, n=4 + s, m=1 + s % 3)
        out.append((f"dist{s}", prog, ref))
    for s in range(3):
        prog, ref = simplex_program(300 + s, 4 + s)
        out.append((f"simplex{s}", prog, ref))
    prog, ref = fixed_cone_program()
    out.append(("fixed_cone", prog, ref))
    prog, ref = two_cuts_program()
    out.append(("two_cuts", prog, ref))
    return out


def mixed_ball_program(seed: int, k: int) -> tuple[ConicProgram, float]:
    """Binaries z widen or shrink a ball that x must stay in; knapsack on z.

    min c.x + d.z  s.t. ||x - a|| <= r0 + w.z,  q.z <= B.
    For fixed z the continuous optimum is c.a - (r0 + w.z) ||c|| whenever the
    radius is nonnegative, so the enumeration oracle is closed form.
    """
    rng = np.random.default_rng(seed)
    n = 3
    a = rng.normal(size=n)
    c = rng.normal(size=n)
    d = rng.uniform(0.2, 2.0, k)
    w = rng.uniform(-1.0, 2.0, k)
    r0 = rng.uniform(0.5, 1.5)
    q = rng.uniform(1.0, 3.0, k)
    B = 0.5 * q.sum()
    best = np.inf
    for z in itertools.product((0.0, 1.0), repeat=k):
        z = np.array(z)
        radius = r0 + w @ z
        if radius < 0 or q @ z > B:
            continue
        best = min(best, float(c @ a - radius * np.linalg.norm(c) + d @ z))
    # variables (x, z)
    nv = n + k
    cone_a = np.hstack([np.eye(n), np.zeros((n, k))])
    top = np.concatenate([np.zeros(n), w])
    G = np.concatenate([np.zeros(n), q])[None, :]
    prog = ConicProgram(
        c=np.concatenate([c, d]), G=G, h=[B],
        cones=[SOC(cone_a, -a, top, r0, name="ball")],
        lb=np.concatenate([np.full(n, -np.inf), np.zeros(k)]),
        ub=np.concatenate([np.full(n, np.inf), np.ones(k)]),
        binaries=np.arange(n, nv),
    )
    return prog, best


def mixed_suite() -> list[tuple[str, ConicProgram, float]]:
    """10 MI-SOCP instances with 3 to 8 binaries."""
    return [(f"mix{s}", *mixed_ball_program(400 + s, 3 + s % 6)) for s in range(10)]
