"""Energy, reserve and curtailment-cap scheduling models.

Three programs share one constraint skeleton:

* ``m1``: moments of the wind deviation are constants, the rough margin uses
  the gamma0 multiplier and no compensation term (the traditional
  reformulation, with caps fixed).
* ``m0``: caps are decisions; the truncated mean and standard deviation enter
  through piecewise-linear surrogates (lambda method with adjacency
  binaries) and the compensation term kappa is affine in the caps. This is a
  mixed-integer SOCP.
* correction: caps fixed at the M0 optimum and every surrogate replaced by a
  constant, which leaves a linear program in dispatch and reserves.

Every chance constraint is written as ``base + margin <= bound`` with margin
``+-K mu + gamma0 * Lambda + kappa``; ``Lambda`` variables carry the
standard-deviation terms through second-order cones.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np

from .gp import (
    SurrogateBundle,
    build_bundle,
    constraint_labels,
    gamma0 as gamma0_rule,
    gen_kappa_samples,
    gen_moment_samples,
    gp_fit,
    gp_predict,
    rough_margins,
)
from .grid import GridCase, Sensitivities, compute_ptdf, compute_sensitivities
from .scenarios import ScenarioSet, empirical_margins, truncated_stats
from .solver import ConicProgram, ProgramBuilder, check_solution, solve_convex, solve_misocp

__all__ = [
    "CorrectionInfeasible",
    "DispatchSolution",
    "ModelError",
    "ScheduleConfig",
    "ScheduleProblem",
    "build_correction_lp",
    "build_m0",
    "build_m1",
    "correct",
    "correction_constants",
    "solve_correction_lp",
    "solve_m0",
    "solve_m1",
    "solve_problem",
    "solve_schedule",
    "train_bundle",
]

logger = logging.getLogger(__name__)

CorrectionMode = Literal["empirical", "se-gp"]


class ModelError(RuntimeError):
    """A model could not be built or solved; ``stage`` names the step."""

    def __init__(self, stage: str, message: str, detail: dict | None = None):
        self.stage = stage
        self.detail = detail or {}
        super().__init__(f"[{stage}] {message}")


class CorrectionInfeasible(ModelError):
    """The correction LP has no solution; ``binding`` lists the culprits."""

    def __init__(self, binding: list[str], detail: dict | None = None):
        self.binding = binding
        msg = "correction LP infeasible; constraints needing relaxation: " + ", ".join(binding[:10])
        super().__init__("correct", msg, detail)


# ------------------------------------------------------------------ problems


@dataclass(eq=False)
class ScheduleProblem:
    """A built program plus the bookkeeping needed to read its solution."""

    method: str
    program: ConicProgram
    case: GridCase
    sens: Sensitivities
    epsilon: float
    gamma0: float
    index: dict[str, np.ndarray]
    monitored: np.ndarray
    mu: np.ndarray | None = None
    sigma: np.ndarray | None = None
    kappa: np.ndarray | None = None
    wc: np.ndarray | None = None
    bundle: SurrogateBundle | None = None
    pwl: dict | None = None


def _injection_terms(case: GridCase, ptdf: np.ndarray):
    """Flow ``PF = A_p P + pf0`` for the scheduled (forecast) injections."""
    a_p = ptdf[:, case.gen_bus]
    fixed = -case.demand.copy()
    np.add.at(fixed, case.wind_bus, case.w_fc)
    return a_p, ptdf @ fixed


def _skeleton(case: GridCase, sens: Sensitivities, ptdf: np.ndarray, monitored: np.ndarray):
    b = ProgramBuilder()
    G, L = case.n_gens, monitored.size
    idx = {
        "p": b.add_vars("P_sc", G, case.p_min, case.p_max),
        "r_up": b.add_vars("R_up", G, 0.0),
        "r_dn": b.add_vars("R_dn", G, 0.0),
        "lam_pf": b.add_vars("Lambda_PF", L, 0.0),
        "lam_g": b.add_vars("Lambda_g", G, 0.0),
    }
    b.add_eq({j: 1.0 for j in idx["p"]}, float(case.demand.sum() - case.w_fc.sum()), "balance")
    for g in range(G):
        p, ru, rd = idx["p"][g], idx["r_up"][g], idx["r_dn"][g]
        b.add_le({p: 1.0, ru: 1.0}, case.p_max[g], f"gen_max[{case.gen_ids[g]}]")
        b.add_le({p: -1.0, rd: 1.0}, -case.p_min[g], f"gen_min[{case.gen_ids[g]}]")
    b.add_cost({j: v for j, v in zip(idx["p"], case.cost_energy)})
    b.add_cost({j: v for j, v in zip(idx["r_up"], case.cost_reserve)})
    b.add_cost({j: v for j, v in zip(idx["r_dn"], case.cost_reserve)})
    return b, idx


def _add_chance_constraints(b: ProgramBuilder, idx: dict, case: GridCase, sens: Sensitivities,
                            ptdf: np.ndarray, monitored: np.ndarray, gamma: float,
                            mu_terms, kappa_terms) -> None:
    """Line and reserve chance constraints.

    ``mu_terms(w)`` returns (dict, const) for a linear combination ``w.mu``;
    ``kappa_terms(c)`` returns (dict, const) for constraint ``c``'s kappa.
    """
    a_p, pf0 = _injection_terms(case, ptdf)
    L, G = case.n_lines, case.n_gens
    for pos, l in enumerate(monitored):
        lid = case.line_ids[l]
        lam = idx["lam_pf"][pos]
        for sign, kind, offset in ((1.0, "line_max", 0), (-1.0, "line_min", L)):
            terms: dict[int, float] = {}
            for g in range(G):
                terms[idx["p"][g]] = terms.get(idx["p"][g], 0.0) + sign * a_p[l, g]
            mt, mc = mu_terms(sign * sens.k_matrix[l])
            kt, kc = kappa_terms(offset + l)
            for d in (mt, kt):
                for j, v in d.items():
                    terms[j] = terms.get(j, 0.0) + v
            terms[lam] = terms.get(lam, 0.0) + gamma
            b.add_le(terms, case.line_limit[l] - sign * pf0[l] - mc - kc, f"{kind}[{lid}]")
    ones = np.ones(case.n_wind)
    for g in range(G):
        gid = case.gen_ids[g]
        lam = idx["lam_g"][g]
        for kind, rvar, sign, offset in (("gen_up", idx["r_up"][g], -1.0, 2 * L), ("gen_dn", idx["r_dn"][g], 1.0, 2 * L + G)):
            mt, mc = mu_terms(sign * sens.beta[g] * ones)
            kt, kc = kappa_terms(offset + g)
            terms = {rvar: -1.0, lam: gamma}
            for d in (mt, kt):
                for j, v in d.items():
                    terms[j] = terms.get(j, 0.0) + v
            b.add_le(terms, -mc - kc, f"{kind}[{gid}]")


def _monitored(case: GridCase, monitor: str) -> np.ndarray:
    if monitor == "all":
        return np.arange(case.n_lines)
    if monitor == "limited":
        return case.limited_lines()
    raise ValueError(f"monitor must be 'all' or 'limited', got {monitor!r}")


def _constant_problem(method: str, case: GridCase, sens: Sensitivities, mu, sigma, kappa,
                      epsilon: float, gamma: float, wc, monitor: str, cones: bool) -> ScheduleProblem:
    mu = np.asarray(mu, float).reshape(case.n_wind)
    sigma = np.asarray(sigma, float).reshape(case.n_wind)
    kappa = np.asarray(kappa, float).reshape(2 * case.n_lines + 2 * case.n_gens)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise ModelError(method, "wind moments must be finite")
    if np.any(sigma < 0):
        raise ModelError(method, "negative standard deviation")
    if np.any(case.p_min > case.p_max):
        raise ModelError(method, "infeasible reserve box (P_min > P_max)")
    ptdf = compute_ptdf(case)
    monitored = _monitored(case, monitor)
    b, idx = _skeleton(case, sens, ptdf, monitored)
    k = sens.k_matrix
    line_spread = np.sqrt(np.sum((k * sigma[None, :]) ** 2, axis=1))
    gen_spread = sens.beta * math.sqrt(float(np.sum(sigma ** 2)))
    if cones:
        for pos, l in enumerate(monitored):
            b.add_soc([{}] * case.n_wind, k[l] * sigma, {idx["lam_pf"][pos]: 1.0},
                      name=f"Lambda_PF[{case.line_ids[l]}]")
        for g in range(case.n_gens):
            b.add_soc([{}] * case.n_wind, sens.beta[g] * sigma, {idx["lam_g"][g]: 1.0},
                      name=f"Lambda_g[{case.gen_ids[g]}]")
    else:
        b.set_bounds(idx["lam_pf"], lb=line_spread[monitored])
        b.set_bounds(idx["lam_g"], lb=gen_spread)
    b.offset -= float(np.sum(case.cost_energy * sens.beta)) * float(np.sum(mu))
    _add_chance_constraints(
        b, idx, case, sens, ptdf, monitored, gamma,
        mu_terms=lambda w: ({}, float(w @ mu)),
        kappa_terms=lambda c: ({}, float(kappa[c])),
    )
    return ScheduleProblem(method, b.build(), case, sens, epsilon, gamma, dict(idx), monitored,
                           mu=mu, sigma=sigma, kappa=kappa, wc=np.asarray(wc, float).copy())


def build_m1(case: GridCase, sens: Sensitivities, mu, sigma, epsilon: float = 0.05, *,
             gamma_rule: str = "gaussian", caps=None, monitor: str = "limited") -> ScheduleProblem:
    """Fixed-moment SOCP; the margin is ``+-K mu + gamma0 ||K sigma||``.

    ``caps`` only records which curtailment caps the moments belong to
    (default: installed capacity); they are not decisions here.
    """
    gamma = gamma0_rule(epsilon, gamma_rule)
    caps = case.w_max.copy() if caps is None else np.broadcast_to(np.asarray(caps, float), (case.n_wind,))
    zero = np.zeros(2 * case.n_lines + 2 * case.n_gens)
    return _constant_problem("m1", case, sens, mu, sigma, zero, epsilon, gamma, caps, monitor, cones=True)


def build_correction_lp(case: GridCase, sens: Sensitivities, wc, mu, sigma, kappa, gamma: float,
                        epsilon: float = 0.05, *, monitor: str = "limited") -> ScheduleProblem:
    """LP with caps fixed at ``wc`` and constant moments and kappa.

    The standard-deviation terms are constants, so each Lambda is simply
    bounded below by its value and no cone remains.
    """
    return _constant_problem("correction", case, sens, mu, sigma, kappa, epsilon, gamma, wc,
                             monitor, cones=False)


def build_m0(case: GridCase, sens: Sensitivities, bundle: SurrogateBundle, epsilon: float | None = None,
             *, fix_caps: Literal["free", "max"] = "free", monitor: str = "limited") -> ScheduleProblem:
    """Data-driven MI-SOCP with curtailment caps as decisions.

    Each farm's cap is a convex combination of PWL breakpoints; ``S - 1``
    binaries select the active segment (the last segment is implied when all
    are zero) and adjacency rows keep at most two neighbouring weights
    positive.
    """
    try:
        bundle.check_case(case)
    except ValueError as exc:
        raise ModelError("m0", str(exc)) from exc
    epsilon = bundle.epsilon if epsilon is None else epsilon
    if abs(epsilon - bundle.epsilon) > 1e-12:
        raise ModelError("m0", f"bundle trained for epsilon={bundle.epsilon}, requested {epsilon}")
    if np.any(case.w_max < case.w_fc):
        raise ModelError("m0", "empty cap domain")
    gamma = bundle.gamma0
    ptdf = compute_ptdf(case)
    monitored = _monitored(case, monitor)
    b, idx = _skeleton(case, sens, ptdf, monitored)
    nw = case.n_wind
    wc = b.add_vars("wc", nw, case.w_fc, case.w_max)
    if fix_caps == "max":
        b.set_bounds(wc, lb=case.w_max, ub=case.w_max)
    elif fix_caps != "free":
        raise ValueError(f"fix_caps must be 'free' or 'max', got {fix_caps!r}")
    mu = b.add_vars("mu", nw)
    sig = b.add_vars("sigma", nw, 0.0)
    idx.update(wc=wc, mu=mu, sigma=sig)
    lam_blocks, bin_blocks = [], []
    for i in range(nw):
        fm, fs = bundle.mu_pwl[i], bundle.sigma_pwl[i]
        if not np.allclose(fm.x, fs.x):
            raise ModelError("m0", "mean and sigma surrogates must share breakpoints")
        S = fm.segments
        lam = b.add_vars(f"pwl_w{i}", S + 1, 0.0, 1.0)
        ybin = b.add_vars(f"seg_w{i}", S - 1, 0.0, 1.0, binary=True) if S > 1 else np.zeros(0, int)
        lam_blocks.append(lam)
        bin_blocks.append(ybin)
        b.add_eq({j: 1.0 for j in lam}, 1.0, f"pwl_sum[{i}]")
        b.add_eq({**{j: x for j, x in zip(lam, fm.x)}, wc[i]: -1.0}, 0.0, f"pwl_wc[{i}]")
        b.add_eq({**{j: v for j, v in zip(lam, fm.y)}, mu[i]: -1.0}, 0.0, f"pwl_mu[{i}]")
        b.add_eq({**{j: v for j, v in zip(lam, fs.y)}, sig[i]: -1.0}, 0.0, f"pwl_sigma[{i}]")
        if S > 1:
            b.add_le({j: 1.0 for j in ybin}, 1.0, f"seg_sum[{i}]")

            def seg(s):  # y_s as (terms, const); segments are 1-based
                if s < S:
                    return {int(ybin[s - 1]): 1.0}, 0.0
                return {int(j): -1.0 for j in ybin}, 1.0

            for s in range(S + 1):
                terms = {int(lam[s]): 1.0}
                rhs = 0.0
                for t in (s, s + 1):
                    if 1 <= t <= S:
                        st, sc = seg(t)
                        for j, v in st.items():
                            terms[j] = terms.get(j, 0.0) - v
                        rhs += sc
                b.add_le(terms, rhs, f"pwl_adj[{i},{s}]")
    idx["pwl"] = np.concatenate(lam_blocks) if lam_blocks else np.zeros(0, int)
    idx["segments"] = np.concatenate(bin_blocks) if bin_blocks else np.zeros(0, int)

    k = sens.k_matrix
    for pos, l in enumerate(monitored):
        b.add_soc([{int(sig[i]): float(k[l, i])} for i in range(nw)], np.zeros(nw),
                  {int(idx["lam_pf"][pos]): 1.0}, name=f"Lambda_PF[{case.line_ids[l]}]")
    for g in range(case.n_gens):
        b.add_soc([{int(sig[i]): float(sens.beta[g])} for i in range(nw)], np.zeros(nw),
                  {int(idx["lam_g"][g]): 1.0}, name=f"Lambda_g[{case.gen_ids[g]}]")
    b.add_cost({int(j): -float(np.sum(case.cost_energy * sens.beta)) for j in mu})

    coef = bundle.kappa_coef
    _add_chance_constraints(
        b, idx, case, sens, ptdf, monitored, gamma,
        mu_terms=lambda w: ({int(mu[i]): float(w[i]) for i in range(nw)}, 0.0),
        kappa_terms=lambda c: ({int(wc[i]): float(coef[c, i]) for i in range(nw)}, 0.0),
    )
    pwl = {"lam": lam_blocks, "bins": bin_blocks, "x": [f.x for f in bundle.mu_pwl]}
    return ScheduleProblem("m0", b.build(), case, sens, epsilon, gamma, idx, monitored,
                           bundle=bundle, pwl=pwl)


def _segment_rounding(problem: ScheduleProblem):
    """Rounding heuristic: pick, per farm, the segment holding the relaxed cap."""
    prog = problem.program
    pos = {int(j): k for k, j in enumerate(prog.binaries)}

    def rounding(x: np.ndarray, _prog: ConicProgram) -> np.ndarray:
        out = np.zeros(prog.binaries.size)
        for i, (bins, xs) in enumerate(zip(problem.pwl["bins"], problem.pwl["x"])):
            if bins.size == 0:
                continue
            w = float(x[problem.index["wc"][i]])
            s = int(np.clip(np.searchsorted(xs, w, side="right"), 1, xs.size - 1))  # 1-based
            if s < xs.size - 1:
                out[pos[int(bins[s - 1])]] = 1.0
        return out

    return rounding


# ------------------------------------------------------------------ solutions


@dataclass(eq=False)
class DispatchSolution:
    """Schedule, margins and cost split of one solved stage."""

    method: str
    stage: str
    case_name: str
    epsilon: float
    gamma0: float
    p_sc: np.ndarray
    r_up: np.ndarray
    r_dn: np.ndarray
    wc: np.ndarray
    lambda_pf: np.ndarray
    lambda_g: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    kappa: np.ndarray
    rough: np.ndarray
    objective: float
    energy_cost: float
    reserve_cost: float
    labels: list[tuple[str, int]]
    diagnostics: dict = field(default_factory=dict)
    empirical: np.ndarray | None = None
    previous: "DispatchSolution | None" = None

    @property
    def total_cost(self) -> float:
        return self.energy_cost + self.reserve_cost

    @property
    def total_up(self) -> float:
        return float(np.sum(self.r_up))

    @property
    def total_dn(self) -> float:
        return float(np.sum(self.r_dn))

    @property
    def margins(self) -> np.ndarray:
        """Total margin (rough + kappa) per chance constraint."""
        return self.rough + self.kappa

    def summary_rows(self) -> list[tuple[str, float, str]]:
        return [
            ("Total operational cost", self.total_cost, "$"),
            ("Energy cost", self.energy_cost, "$"),
            ("Reserve cost", self.reserve_cost, "$"),
            ("Total up reserve capacity", self.total_up, "MW"),
            ("Total down reserve capacity", self.total_dn, "MW"),
        ]

    def to_dict(self, include_timing: bool = False) -> dict:
        """Plain-JSON form; wall-clock entries are dropped unless requested
        so identical runs serialize identically."""

        def arr(v):
            return None if v is None else np.asarray(v, float).tolist()

        diag = dict(self.diagnostics)
        if not include_timing:
            diag.pop("wall_time", None)
            diag.pop("timing", None)
        return {
            "method": self.method,
            "stage": self.stage,
            "case": self.case_name,
            "epsilon": self.epsilon,
            "gamma0": self.gamma0,
            "p_sc": arr(self.p_sc),
            "r_up": arr(self.r_up),
            "r_dn": arr(self.r_dn),
            "wc": arr(self.wc),
            "lambda_pf": arr(self.lambda_pf),
            "lambda_g": arr(self.lambda_g),
            "mu": arr(self.mu),
            "sigma": arr(self.sigma),
            "objective": self.objective,
            "cost": {
                "total": self.total_cost,
                "energy": self.energy_cost,
                "reserve": self.reserve_cost,
                "total_up_reserve": self.total_up,
                "total_down_reserve": self.total_dn,
            },
            "margins": {
                "labels": [list(x) for x in self.labels],
                "rough": arr(self.rough),
                "kappa": arr(self.kappa),
                "empirical": arr(self.empirical),
            },
            "diagnostics": diag,
            "previous": None if self.previous is None else self.previous.to_dict(include_timing),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DispatchSolution":
        def arr(v):
            return None if v is None else np.asarray(v, float)

        m = d["margins"]
        return cls(
            method=d["method"],
            stage=d["stage"],
            case_name=d["case"],
            epsilon=float(d["epsilon"]),
            gamma0=float(d["gamma0"]),
            p_sc=arr(d["p_sc"]),
            r_up=arr(d["r_up"]),
            r_dn=arr(d["r_dn"]),
            wc=arr(d["wc"]),
            lambda_pf=arr(d["lambda_pf"]),
            lambda_g=arr(d["lambda_g"]),
            mu=arr(d["mu"]),
            sigma=arr(d["sigma"]),
            kappa=arr(m["kappa"]),
            rough=arr(m["rough"]),
            objective=float(d["objective"]),
            energy_cost=float(d["cost"]["energy"]),
            reserve_cost=float(d["cost"]["reserve"]),
            labels=[(str(a), int(b)) for a, b in m["labels"]],
            diagnostics=d.get("diagnostics", {}),
            empirical=arr(m.get("empirical")),
            previous=None if d.get("previous") is None else cls.from_dict(d["previous"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DispatchSolution":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def margin_rows(self) -> list[dict]:
        """Per-constraint margin table (for CSV export)."""
        rows = []
        for k, (kind, ident) in enumerate(self.labels):
            rows.append({
                "constraint": kind,
                "id": ident,
                "rough": float(self.rough[k]),
                "kappa": float(self.kappa[k]),
                "margin": float(self.rough[k] + self.kappa[k]),
                "empirical": float(self.empirical[k]) if self.empirical is not None else float("nan"),
            })
        return rows


def _cost_split(case: GridCase, sens: Sensitivities, p, r_up, r_dn, mu) -> tuple[float, float]:
    expected = p - sens.beta * float(np.sum(mu))
    energy = float(case.cost_energy @ expected)
    reserve = float(case.cost_reserve @ (r_up + r_dn))
    return energy, reserve


def _extract(problem: ScheduleProblem, sol, stage: str) -> DispatchSolution:
    case, sens, idx = problem.case, problem.sens, problem.index
    x = sol.x
    p, r_up, r_dn = x[idx["p"]], x[idx["r_up"]], x[idx["r_dn"]]
    if problem.method == "m0":
        wc = x[idx["wc"]].copy()
        # evaluate the PWL surrogates exactly at the chosen caps
        bundle = problem.bundle
        wc = np.clip(wc, case.w_fc, case.w_max)
        mu = bundle.mu_at(wc)
        sigma = bundle.sigma_at(wc)
        kappa = bundle.kappa(wc)
    else:
        wc, mu, sigma, kappa = problem.wc, problem.mu, problem.sigma, problem.kappa
    lam_pf = np.zeros(case.n_lines)
    lam_pf[problem.monitored] = x[idx["lam_pf"]]
    rough = rough_margins(mu, sigma, sens, problem.gamma0)
    energy, reserve = _cost_split(case, sens, p, r_up, r_dn, mu)
    report = check_solution(problem.program, x)
    diag = {
        "status": sol.status,
        "solver_objective": float(sol.objective),
        "iterations": int(sol.iterations),
        "nodes": int(sol.nodes),
        "gap": float(sol.gap) if np.isfinite(sol.gap) else None,
        "wall_time": float(sol.wall_time),
        "max_residual": float(report.max),
        "n_vars": int(problem.program.n),
        "n_binaries": int(problem.program.binaries.size),
        "n_cones": len(problem.program.cones),
        "monitored_lines": int(problem.monitored.size),
    }
    if sol.info:
        diag["solver"] = {k: v for k, v in sol.info.items() if isinstance(v, (int, float, str, bool))}
    return DispatchSolution(
        method=problem.method if problem.method != "correction" else "m0",
        stage=stage,
        case_name=case.name,
        epsilon=problem.epsilon,
        gamma0=problem.gamma0,
        p_sc=p.copy(), r_up=r_up.copy(), r_dn=r_dn.copy(), wc=np.asarray(wc, float).copy(),
        lambda_pf=lam_pf, lambda_g=x[idx["lam_g"]].copy(),
        mu=np.asarray(mu, float).copy(), sigma=np.asarray(sigma, float).copy(),
        kappa=np.asarray(kappa, float).copy(), rough=rough,
        objective=float(sol.objective), energy_cost=energy, reserve_cost=reserve,
        labels=constraint_labels(case), diagnostics=diag,
    )


def solve_problem(problem: ScheduleProblem, *, tol: float = 1e-8, gap: float = 1e-6,
                  node_limit: int = 10000) -> DispatchSolution:
    """Solve a built problem (branch-and-bound when it has binaries)."""
    prog = problem.program
    if prog.binaries.size:
        sol = solve_misocp(prog, tol=tol, gap=gap, node_limit=node_limit,
                           rounding=_segment_rounding(problem))
        stage = "misocp"
    else:
        sol = solve_convex(prog, tol=tol)
        stage = "socp" if prog.cones else "lp"
    if sol.status not in ("optimal", "node_limit") or sol.x is None:
        raise ModelError(problem.method, f"solver returned {sol.status}", {"status": sol.status, **sol.info})
    if sol.status == "node_limit":
        logger.warning("node limit reached; incumbent gap %.3g", sol.gap)
    return _extract(problem, sol, stage)


def solve_m1(case: GridCase, sens: Sensitivities, scenarios: ScenarioSet | None = None, epsilon: float = 0.05,
             *, caps=None, mu=None, sigma=None, gamma_rule: str = "gaussian", monitor: str = "limited",
             tol: float = 1e-8) -> DispatchSolution:
    """Traditional reformulation with moments of the deviations capped at ``caps``.

    Moments come from ``scenarios`` (sample statistics after capping) unless
    given explicitly.
    """
    caps = case.w_max.copy() if caps is None else np.broadcast_to(np.asarray(caps, float), (case.n_wind,)).copy()
    if mu is None or sigma is None:
        if scenarios is None:
            raise ValueError("need scenarios or explicit moments")
        st = truncated_stats(scenarios, caps, case.w_fc)
        mu = st.mu if mu is None else mu
        sigma = st.sigma if sigma is None else sigma
    prob = build_m1(case, sens, mu, sigma, epsilon, gamma_rule=gamma_rule, caps=caps, monitor=monitor)
    return solve_problem(prob, tol=tol)


def solve_m0(case: GridCase, sens: Sensitivities, bundle: SurrogateBundle, *,
             fix_caps: str = "free", monitor: str = "limited", tol: float = 1e-8, gap: float = 1e-6,
             node_limit: int = 10000, dump_program: str | Path | None = None) -> DispatchSolution:
    prob = build_m0(case, sens, bundle, fix_caps=fix_caps, monitor=monitor)
    if dump_program is not None:
        from .solver import dump_program as _dump

        _dump(prob.program, dump_program)
    return solve_problem(prob, tol=tol, gap=gap, node_limit=node_limit)


# ----------------------------------------------------------------- correction


@dataclass(frozen=True, eq=False)
class CorrectionConstants:
    wc: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    kappa: np.ndarray
    empirical: np.ndarray | None = None


def correction_constants(case: GridCase, sens: Sensitivities, scenarios: ScenarioSet | None,
                         wc, gamma: float, epsilon: float, mode: CorrectionMode = "empirical",
                         bundle: SurrogateBundle | None = None) -> CorrectionConstants:
    """Exact (or SE-GP) moments and kappa at a fixed cap vector.

    ``empirical`` recomputes the truncated statistics and the empirical
    margins at ``wc`` so that rough + kappa equals the empirical margin
    exactly. ``se-gp`` predicts mean and sigma with the SE moment GPs and
    kappa with SE-kernel GPs fitted to the stored kappa training samples.
    """
    wc = np.broadcast_to(np.asarray(wc, float), (case.n_wind,)).copy()
    if mode == "empirical":
        if scenarios is None:
            raise ValueError("empirical correction needs the scenario set")
        st = truncated_stats(scenarios, wc, case.w_fc)
        em = empirical_margins(scenarios, wc, case.w_fc, sens.k_matrix, sens.beta, epsilon).stacked()
        rough = rough_margins(st.mu, st.sigma, sens, gamma)
        return CorrectionConstants(wc, st.mu, st.sigma, em - rough, em)
    if mode == "se-gp":
        if bundle is None:
            raise ValueError("se-gp correction needs a surrogate bundle")
        mu = np.array([gp_predict(m, w) for m, w in zip(bundle.mu_gp, wc)], float).reshape(-1)
        sigma = np.maximum(np.array([gp_predict(m, w) for m, w in zip(bundle.sigma_gp, wc)], float).reshape(-1), 0.0)
        kappa = np.empty(bundle.n_constraints)
        for c in range(bundle.n_constraints):
            model = gp_fit(bundle.kappa_caps, bundle.kappa_values[:, c], kind="se")
            kappa[c] = float(np.asarray(gp_predict(model, wc[None, :])).reshape(-1)[0])
        return CorrectionConstants(wc, mu, sigma, kappa)
    raise ValueError(f"unknown correction mode {mode!r}")


def _elastic_diagnosis(problem: ScheduleProblem, tol: float) -> list[str]:
    """Names of chance/limit rows that need slack for the LP to be feasible."""
    prog = problem.program
    m = prog.G.shape[0]
    n = prog.n
    G = np.hstack([prog.G, -np.eye(m)])
    c = np.concatenate([np.zeros(n), np.ones(m)])
    lb = np.concatenate([prog.lb, np.zeros(m)])
    ub = np.concatenate([prog.ub, np.full(m, np.inf)])
    A = np.hstack([prog.A_eq, np.zeros((prog.A_eq.shape[0], m))])
    elastic = ConicProgram(c=c, A_eq=A, b_eq=prog.b_eq, G=G, h=prog.h, lb=lb, ub=ub)
    sol = solve_convex(elastic, tol=tol)
    if not sol.ok:
        return ["<balance or bounds>"]
    slack = sol.x[n:]
    return [prog.ineq_names[i] for i in np.flatnonzero(slack > 1e-6)]


def solve_correction_lp(case: GridCase, sens: Sensitivities, constants: CorrectionConstants, gamma: float,
                        epsilon: float, *, monitor: str = "limited", tol: float = 1e-8) -> DispatchSolution:
    prob = build_correction_lp(case, sens, constants.wc, constants.mu, constants.sigma, constants.kappa,
                               gamma, epsilon, monitor=monitor)
    sol = solve_convex(prob.program, tol=tol)
    if sol.status == "infeasible":
        raise CorrectionInfeasible(_elastic_diagnosis(prob, tol))
    if not sol.ok:
        raise ModelError("correct", f"LP solver returned {sol.status}")
    out = _extract(prob, sol, "corrected")
    out.empirical = None if constants.empirical is None else constants.empirical.copy()
    return out


def correct(case: GridCase, sens: Sensitivities, scenarios: ScenarioSet | None, sol: DispatchSolution,
            epsilon: float | None = None, mode: CorrectionMode = "empirical", *,
            bundle: SurrogateBundle | None = None, monitor: str = "limited", tol: float = 1e-8) -> DispatchSolution:
    """Fix the caps of an M0 solution, freeze exact constants, re-solve the LP.

    The returned solution keeps ``sol`` as ``previous``.
    """
    epsilon = sol.epsilon if epsilon is None else epsilon
    consts = correction_constants(case, sens, scenarios, sol.wc, sol.gamma0, epsilon, mode, bundle)
    out = solve_correction_lp(case, sens, consts, sol.gamma0, epsilon, monitor=monitor, tol=tol)
    out.diagnostics["correction_mode"] = mode
    out.previous = sol
    return out


# -------------------------------------------------------------------- pipeline


@dataclass
class ScheduleConfig:
    """Knobs of the training + scheduling pipeline (defaults as documented)."""

    epsilon: float = 0.05
    gamma_rule: str = "gaussian"
    pwl_segments: int = 10
    grid_steps: int = 20
    wc0: list[float] | None = None
    t_wc: list[float] | None = None
    n_lhs: int = 64
    lhs_seed: int = 0
    jitter: float = 1e-10
    correction: str = "empirical"
    fix_caps: str = "free"
    monitor: str = "limited"
    tol: float = 1e-8
    gap: float = 1e-6
    node_limit: int = 10000

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 0.5)")
        if self.pwl_segments < 1:
            raise ValueError("pwl_segments must be >= 1")

    def with_(self, **kw) -> "ScheduleConfig":
        return replace(self, **kw)


def train_bundle(case: GridCase, scenarios: ScenarioSet, config: ScheduleConfig | None = None,
                 sens: Sensitivities | None = None) -> SurrogateBundle:
    """Offline stage: moment grid, kappa samples, GP fits and linearization."""
    config = config or ScheduleConfig()
    sens = sens or compute_sensitivities(case)
    t0 = time.perf_counter()
    moments = gen_moment_samples(scenarios, case, config.wc0, config.t_wc, steps=config.grid_steps)
    gamma = gamma0_rule(config.epsilon, config.gamma_rule)
    kappa = gen_kappa_samples(scenarios, case, sens, moments, gamma, config.epsilon,
                              n_lhs=config.n_lhs, seed=config.lhs_seed)
    meta = {"scenario_source": dict(scenarios.source), "lhs_seed": config.lhs_seed, "n_lhs": config.n_lhs}
    bundle = build_bundle(case, moments, kappa, config.epsilon, pwl_segments=config.pwl_segments,
                          gamma_rule=config.gamma_rule, jitter=config.jitter, meta=meta)
    logger.info("trained surrogates in %.2fs", time.perf_counter() - t0)
    return bundle


def solve_schedule(case: GridCase, scenarios: ScenarioSet, config: ScheduleConfig | None = None, *,
                   bundle: SurrogateBundle | None = None, sens: Sensitivities | None = None) -> DispatchSolution:
    """Full M0 pipeline: train (unless given), MI-SOCP, correction LP.

    Errors are re-raised as :class:`ModelError` tagged with the stage.
    """
    config = config or ScheduleConfig()
    sens = sens or compute_sensitivities(case)
    t0 = time.perf_counter()
    if bundle is None:
        try:
            bundle = train_bundle(case, scenarios, config, sens)
        except ModelError:
            raise
        except Exception as exc:
            raise ModelError("train", str(exc)) from exc
    t1 = time.perf_counter()
    first = solve_m0(case, sens, bundle, fix_caps=config.fix_caps, monitor=config.monitor,
                     tol=config.tol, gap=config.gap, node_limit=config.node_limit)
    t2 = time.perf_counter()
    out = correct(case, sens, scenarios, first, config.epsilon, config.correction, bundle=bundle,
                  monitor=config.monitor, tol=config.tol)
    t3 = time.perf_counter()
    out.diagnostics["timing"] = {"train": t1 - t0, "misocp": t2 - t1, "correct": t3 - t2, "total": t3 - t0}
    return out
