"""Problem container for mixed-integer second-order cone programs."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["ConicProgram", "ProgramBuilder", "ResidualReport", "SOC", "Solution", "check_solution", "dump_program"]


@dataclass
class SOC:
    """Cone constraint ``||A x + b||_2 <= c.x + d``."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float = 0.0
    name: str = ""

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, float))
        self.b = np.asarray(self.b, float).reshape(-1)
        self.c = np.asarray(self.c, float).reshape(-1)
        self.d = float(self.d)
        if self.A.shape[0] < 1:
            raise ValueError(f"cone {self.name!r} needs at least one row")
        if self.b.shape[0] != self.A.shape[0]:
            raise ValueError(f"cone {self.name!r}: b has {self.b.size} rows, A has {self.A.shape[0]}")
        if self.c.shape[0] != self.A.shape[1]:
            raise ValueError(f"cone {self.name!r}: c length {self.c.size} != {self.A.shape[1]} variables")

    @property
    def dim(self) -> int:
        return self.A.shape[0] + 1

    def violation(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(self.A @ x + self.b) - (self.c @ x + self.d))


@dataclass
class ConicProgram:
    """minimize c.x + offset subject to

    * ``A_eq x = b_eq``
    * ``G x <= h``
    * every cone in ``cones``
    * ``lb <= x <= ub`` (infinite entries allowed)
    * ``x[j]`` in {0, 1} for ``j`` in ``binaries``
    """

    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    cones: list[SOC] = field(default_factory=list)
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    binaries: np.ndarray | None = None
    offset: float = 0.0
    var_names: list[str] | None = None
    eq_names: list[str] | None = None
    ineq_names: list[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, float).reshape(-1)
        n = self.c.size
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.atleast_2d(np.asarray(self.A_eq, float))
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).reshape(-1)
        self.G = np.zeros((0, n)) if self.G is None else np.atleast_2d(np.asarray(self.G, float))
        self.h = np.zeros(0) if self.h is None else np.asarray(self.h, float).reshape(-1)
        if self.A_eq.size == 0:
            self.A_eq = self.A_eq.reshape(0, n)
        if self.G.size == 0:
            self.G = self.G.reshape(0, n)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, float).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, float).copy()
        self.binaries = (
            np.zeros(0, dtype=int) if self.binaries is None else np.asarray(self.binaries, dtype=int).reshape(-1)
        )
        self.validate()

    @property
    def n(self) -> int:
        return self.c.size

    def validate(self) -> None:
        n = self.n
        if self.A_eq.shape[1] != n or self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError(f"equality block has shape {self.A_eq.shape} with {self.b_eq.size} rhs entries")
        if self.G.shape[1] != n or self.G.shape[0] != self.h.size:
            raise ValueError(f"inequality block has shape {self.G.shape} with {self.h.size} rhs entries")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("bounds must have one entry per variable")
        for cone in self.cones:
            if cone.A.shape[1] != n:
                raise ValueError(f"cone {cone.name!r} has {cone.A.shape[1]} columns, expected {n}")
        if self.binaries.size and (self.binaries.min() < 0 or self.binaries.max() >= n):
            raise ValueError("binary index out of range")

    def name_of(self, j: int) -> str:
        return self.var_names[j] if self.var_names else f"x{j}"

    def with_bounds(self, lb: np.ndarray, ub: np.ndarray) -> "ConicProgram":
        return ConicProgram(
            c=self.c, A_eq=self.A_eq, b_eq=self.b_eq, G=self.G, h=self.h, cones=self.cones,
            lb=lb, ub=ub, binaries=self.binaries, offset=self.offset, var_names=self.var_names,
            eq_names=self.eq_names, ineq_names=self.ineq_names,
        )

    def relaxation(self) -> "ConicProgram":
        """Copy with binaries treated as continuous variables in [0, 1]."""
        lb, ub = self.lb.copy(), self.ub.copy()
        lb[self.binaries] = np.maximum(lb[self.binaries], 0.0)
        ub[self.binaries] = np.minimum(ub[self.binaries], 1.0)
        out = self.with_bounds(lb, ub)
        out.binaries = np.zeros(0, dtype=int)
        return out


class ProgramBuilder:
    """Incremental construction of a ConicProgram with named variable blocks."""

    def __init__(self):
        self._names: list[str] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._c: dict[int, float] = {}
        self._eq: list[tuple[dict[int, float], float, str]] = []
        self._le: list[tuple[dict[int, float], float, str]] = []
        self._cones: list[tuple[list[dict[int, float]], list[float], dict[int, float], float, str]] = []
        self._binaries: list[int] = []
        self.offset = 0.0
        self.blocks: dict[str, np.ndarray] = {}

    @property
    def n(self) -> int:
        return len(self._names)

    def add_vars(self, name: str, size: int, lb=-np.inf, ub=np.inf, binary: bool = False) -> np.ndarray:
        start = self.n
        lb = np.broadcast_to(np.asarray(lb, float), (size,))
        ub = np.broadcast_to(np.asarray(ub, float), (size,))
        for k in range(size):
            self._names.append(f"{name}[{k}]")
            self._lb.append(float(lb[k]))
            self._ub.append(float(ub[k]))
        idx = np.arange(start, start + size)
        if binary:
            self._binaries.extend(idx.tolist())
        self.blocks[name] = idx
        return idx

    def set_bounds(self, idx, lb=None, ub=None) -> None:
        idx = np.atleast_1d(idx)
        if lb is not None:
            for j, v in zip(idx, np.broadcast_to(lb, idx.shape)):
                self._lb[j] = float(v)
        if ub is not None:
            for j, v in zip(idx, np.broadcast_to(ub, idx.shape)):
                self._ub[j] = float(v)

    def add_cost(self, terms: dict[int, float]) -> None:
        for j, v in terms.items():
            self._c[int(j)] = self._c.get(int(j), 0.0) + float(v)

    @staticmethod
    def _clean(terms: dict[int, float]) -> dict[int, float]:
        return {int(j): float(v) for j, v in terms.items() if v != 0.0}

    def add_eq(self, terms: dict[int, float], rhs: float, name: str = "") -> None:
        self._eq.append((self._clean(terms), float(rhs), name))

    def add_le(self, terms: dict[int, float], rhs: float, name: str = "") -> None:
        self._le.append((self._clean(terms), float(rhs), name))

    def add_soc(self, rows: list[dict[int, float]], consts, top: dict[int, float], top_const: float = 0.0,
                name: str = "") -> None:
        """``||(rows_k . x + consts_k)_k|| <= top . x + top_const``."""
        self._cones.append(([self._clean(r) for r in rows], [float(v) for v in consts],
                            self._clean(top), float(top_const), name))

    def build(self) -> ConicProgram:
        n = self.n

        def dense(rows):
            m = np.zeros((len(rows), n))
            for i, (terms, _, _) in enumerate(rows):
                for j, v in terms.items():
                    m[i, j] += v
            return m

        c = np.zeros(n)
        for j, v in self._c.items():
            c[j] = v
        cones = []
        for rows, consts, top, top_const, name in self._cones:
            A = np.zeros((len(rows), n))
            for i, r in enumerate(rows):
                for j, v in r.items():
                    A[i, j] += v
            cvec = np.zeros(n)
            for j, v in top.items():
                cvec[j] += v
            cones.append(SOC(A, np.asarray(consts), cvec, top_const, name))
        return ConicProgram(
            c=c,
            A_eq=dense(self._eq),
            b_eq=np.array([r for _, r, _ in self._eq]),
            G=dense(self._le),
            h=np.array([r for _, r, _ in self._le]),
            cones=cones,
            lb=np.array(self._lb),
            ub=np.array(self._ub),
            binaries=np.array(self._binaries, dtype=int),
            offset=self.offset,
            var_names=list(self._names),
            eq_names=[nm for _, _, nm in self._eq],
            ineq_names=[nm for _, _, nm in self._le],
        )


@dataclass
class Solution:
    status: str  # optimal | infeasible | unbounded | iteration_limit | node_limit | numerical_error
    x: np.ndarray | None
    objective: float
    y: np.ndarray | None = None  # equality duals
    z: np.ndarray | None = None  # duals of G x <= h
    iterations: int = 0
    nodes: int = 0
    gap: float = float("nan")
    bound: float = float("nan")
    wall_time: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


@dataclass
class ResidualReport:
    equality: float
    inequality: float
    bounds: float
    cones: float
    integrality: float
    worst: str
    cone_residuals: dict[str, float]

    @property
    def max(self) -> float:
        return max(self.equality, self.inequality, self.bounds, self.cones, self.integrality)

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max <= tol


def check_solution(prog: ConicProgram, x) -> ResidualReport:
    """Maximum violation of each constraint class at ``x``.

    Only positive violations count; a strictly feasible point reports zeros.
    """
    x = np.asarray(x, float)
    if x.shape != (prog.n,):
        raise ValueError(f"point has shape {x.shape}, expected ({prog.n},)")
    worst_name, worst_val = "", 0.0

    def track(name: str, value: float):
        nonlocal worst_name, worst_val
        if value > worst_val:
            worst_name, worst_val = name, value

    eq = 0.0
    if prog.A_eq.shape[0]:
        r = np.abs(prog.A_eq @ x - prog.b_eq)
        i = int(np.argmax(r))
        eq = float(r[i])
        track(prog.eq_names[i] if prog.eq_names else f"eq{i}", eq)
    ineq = 0.0
    if prog.G.shape[0]:
        r = np.maximum(prog.G @ x - prog.h, 0.0)
        i = int(np.argmax(r))
        ineq = float(r[i])
        track(prog.ineq_names[i] if prog.ineq_names else f"ineq{i}", ineq)
    lo = np.where(np.isfinite(prog.lb), prog.lb - x, 0.0)
    hi = np.where(np.isfinite(prog.ub), x - prog.ub, 0.0)
    viol = np.maximum(np.maximum(lo, hi), 0.0)
    bnd = float(viol.max()) if viol.size else 0.0
    if bnd > 0:
        track(f"bound {prog.name_of(int(np.argmax(viol)))}", bnd)
    cone_res: dict[str, float] = {}
    cmax = 0.0
    for k, cone in enumerate(prog.cones):
        name = cone.name or f"cone{k}"
        v = max(cone.violation(x), 0.0)
        cone_res[name] = v
        cmax = max(cmax, v)
        track(name, v)
    integ = 0.0
    if prog.binaries.size:
        xb = x[prog.binaries]
        frac = np.abs(xb - np.round(xb))
        integ = float(frac.max())
        track(f"integrality {prog.name_of(int(prog.binaries[np.argmax(frac)]))}", integ)
    return ResidualReport(eq, ineq, bnd, cmax, integ, worst_name, cone_res)


def dump_program(prog: ConicProgram, path: str | Path) -> None:
    """Write a plain-text listing of the program for cross-checking elsewhere.

    Format: ``VARS`` (name lb ub [B]), ``OBJ`` (sparse coefficients and
    offset), ``EQ``/``LE`` rows (``name: coef*var ... = rhs``) and ``SOC``
    blocks (one row per line of A, then the scalar side).
    """
    def row(coefs: np.ndarray) -> str:
        nz = np.flatnonzero(coefs)
        return " ".join(f"{coefs[j]:+.17g}*{prog.name_of(j)}" for j in nz) or "0"

    binset = set(prog.binaries.tolist())
    lines = [f"# conic program: {prog.n} vars, {prog.A_eq.shape[0]} eq, {prog.G.shape[0]} le, "
             f"{len(prog.cones)} cones, {len(binset)} binaries", "VARS"]
    for j in range(prog.n):
        tag = " B" if j in binset else ""
        lines.append(f"  {prog.name_of(j)} {prog.lb[j]:.17g} {prog.ub[j]:.17g}{tag}")
    lines += ["OBJ", f"  {row(prog.c)} {prog.offset:+.17g}", "EQ"]
    for i in range(prog.A_eq.shape[0]):
        nm = prog.eq_names[i] if prog.eq_names else f"eq{i}"
        lines.append(f"  {nm}: {row(prog.A_eq[i])} = {prog.b_eq[i]:.17g}")
    lines.append("LE")
    for i in range(prog.G.shape[0]):
        nm = prog.ineq_names[i] if prog.ineq_names else f"le{i}"
        lines.append(f"  {nm}: {row(prog.G[i])} <= {prog.h[i]:.17g}")
    lines.append("SOC")
    for k, cone in enumerate(prog.cones):
        lines.append(f"  {cone.name or f'cone{k}'}: norm of {cone.A.shape[0]} rows <= {row(cone.c)} {cone.d:+.17g}")
        for i in range(cone.A.shape[0]):
            lines.append(f"    {row(cone.A[i])} {cone.b[i]:+.17g}")
    Path(path).write_text("\n".join(lines) + "\n")
