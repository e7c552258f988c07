"""Gaussian-process surrogates for truncated wind moments and margin corrections.

Two kernels are supported. The squared-exponential (SE) kernel models the
smooth maps cap -> mean and cap -> standard deviation of the capped
deviation; the linear kernel models the compensation term kappa, whose
posterior mean collapses to an intercept-free affine function of the caps so
it can enter a convex program directly.

Training data come from a scenario set: moments are enumerated per farm on a
uniform cap grid, and kappa is the gap between the empirical margin and the
moment-based rough approximation at each grid cap vector.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from scipy import linalg, stats
from scipy.spatial import Delaunay, QhullError
from scipy.stats import qmc

from .grid import GridCase, Sensitivities
from .scenarios import (
    CONSTRAINT_KINDS,
    ScenarioSet,
    capped_deviations,
    delta_power_flows,
    delta_reserves,
    empirical_margin,
    truncated_stats,
)

__all__ = [
    "BUNDLE_VERSION",
    "GpFitError",
    "GpModel",
    "KappaSamples",
    "MomentSamples",
    "PwlFunction",
    "SurrogateBundle",
    "build_bundle",
    "constraint_labels",
    "gamma0",
    "gen_kappa_samples",
    "gen_moment_samples",
    "gp_fit",
    "gp_predict",
    "kernel_eval",
    "pwl_approximate",
    "rough_margins",
]

logger = logging.getLogger(__name__)

BUNDLE_VERSION = 1
KernelKind = Literal["se", "linear"]
GammaRule = Literal["gaussian", "cantelli"]

MAX_JITTER = 1e-4
INTERP_TOL = 1e-6


class GpFitError(RuntimeError):
    """Gram matrix could not be factorized even at the largest jitter."""


# --------------------------------------------------------------------- kernels


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, float)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if x.ndim == 1:
        return x.reshape(-1, 1)
    return x


def _check_params(kind: str, params: dict) -> None:
    if kind == "se":
        if params["length"] <= 0:
            raise ValueError("SE length scale must be positive")
        if params["tau"] < 0:
            raise ValueError("SE amplitude must be nonnegative")
    elif kind == "linear":
        if params["length"] <= 0:
            raise ValueError("linear-kernel length scale must be positive")
    else:
        raise ValueError(f"unknown kernel {kind!r}")


def kernel_eval(kind: KernelKind, params: dict, x, x_prime) -> np.ndarray:
    """Covariance matrix between point sets ``x`` (n x d) and ``x_prime`` (m x d).

    1-D inputs are read as n points in one dimension.
    """
    _check_params(kind, params)
    a, b = _as_points(x), _as_points(x_prime)
    if kind == "se":
        sq = (
            np.sum(a * a, axis=1)[:, None]
            + np.sum(b * b, axis=1)[None, :]
            - 2.0 * a @ b.T
        )
        sq = np.maximum(sq, 0.0)
        return params["tau"] ** 2 * np.exp(-sq / (2.0 * params["length"] ** 2))
    return a @ b.T / params["length"] ** 2


# ---------------------------------------------------------------------- models


@dataclass(frozen=True, eq=False)
class GpModel:
    """Posterior-mean GP: ``f(x) = sum_k alpha_k C(x_k, x)``."""

    kind: str
    params: dict
    X: np.ndarray
    alpha: np.ndarray
    jitter: float
    log_marginal: float = float("nan")

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def affine_weights(self) -> np.ndarray:
        """Collapsed coefficients ``w`` with ``f(x) = w.x`` (linear kernel only)."""
        if self.kind != "linear":
            raise ValueError("affine collapse only exists for the linear kernel")
        return self.X.T @ self.alpha / self.params["length"] ** 2

    def in_hull(self, x_star) -> np.ndarray:
        """Whether each query point lies in the convex hull of the inputs."""
        q = _as_points(x_star)
        if self.dim == 1:
            lo, hi = self.X.min(), self.X.max()
            span = 1e-9 * max(1.0, hi - lo)
            return (q[:, 0] >= lo - span) & (q[:, 0] <= hi + span)
        try:
            return Delaunay(self.X).find_simplex(q, tol=1e-9) >= 0
        except QhullError:
            lo, hi = self.X.min(axis=0), self.X.max(axis=0)
            return np.all((q >= lo - 1e-9) & (q <= hi + 1e-9), axis=1)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": {k: float(v) for k, v in self.params.items()},
            "X": self.X.tolist(),
            "alpha": self.alpha.tolist(),
            "jitter": float(self.jitter),
            "log_marginal": float(self.log_marginal),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpModel":
        return cls(
            kind=d["kind"],
            params=dict(d["params"]),
            X=np.asarray(d["X"], float).reshape(len(d["X"]), -1),
            alpha=np.asarray(d["alpha"], float),
            jitter=float(d["jitter"]),
            log_marginal=float(d.get("log_marginal", "nan")),
        )


def _factor(gram: np.ndarray, jitter: float):
    """Cholesky of ``gram + j I`` escalating j by 10x up to the relative cap."""
    scale = max(float(np.trace(gram)) / gram.shape[0], 1e-300)
    rel = jitter
    while True:
        j = rel * scale
        try:
            chol = linalg.cho_factor(gram + j * np.eye(gram.shape[0]), lower=True, check_finite=False)
            if np.all(np.diag(chol[0]) > 0):
                return chol, j
        except linalg.LinAlgError:
            pass
        if rel >= MAX_JITTER * (1 - 1e-12):
            raise GpFitError(f"Gram matrix indefinite at jitter {rel:g} x trace scale")
        rel = min(rel * 10.0, MAX_JITTER)


def _log_marginal(chol, y: np.ndarray, alpha: np.ndarray) -> float:
    n = y.size
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(chol[0]))) - 0.5 * n * math.log(2 * math.pi))


def _fit_fixed(kind: str, params: dict, X: np.ndarray, y: np.ndarray, jitter: float):
    gram = kernel_eval(kind, params, X, X)
    chol, j = _factor(gram, jitter)
    alpha = linalg.cho_solve(chol, y, check_finite=False)
    return alpha, j, _log_marginal(chol, y, alpha)


def _linear_alpha(X: np.ndarray, y: np.ndarray, length: float, j: float) -> np.ndarray:
    """Minimum-norm weights with the same linear-kernel posterior mean.

    With more points than input dimensions the linear Gram matrix is rank
    deficient and the jittered solve leaves a large null-space component in
    ``alpha`` that cancels only up to round-off in predictions. The mean is
    the ridge solution ``w = (X'X + j l^2 I)^-1 X'y``; any ``alpha`` with
    ``X' alpha = l^2 w`` reproduces it, and the minimum-norm one is stable.
    """
    d = X.shape[1]
    w = linalg.solve(X.T @ X + j * length ** 2 * np.eye(d), X.T @ y, assume_a="pos")
    alpha, *_ = linalg.lstsq(X.T, length ** 2 * w)
    return alpha


def _final_model(kind: str, params: dict, X: np.ndarray, y: np.ndarray, jitter: float) -> "GpModel":
    alpha, j, lml = _fit_fixed(kind, params, X, y, jitter)
    if kind == "linear":
        alpha = _linear_alpha(X, y, params["length"], j)
    return GpModel(kind, params, X, alpha, j, lml)


def _hyper_grid(kind: str, X: np.ndarray, y: np.ndarray) -> dict[str, np.ndarray]:
    if kind == "se":
        dists = np.sqrt(np.maximum(
            np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=2), 0.0))
        pos = dists[dists > 0]
        step = float(pos.min()) if pos.size else 1.0
        width = float(pos.max()) if pos.size else 1.0
        scale = max(float(np.sqrt(np.mean(y ** 2))), float(np.max(np.abs(y))), 1e-12)
        return {
            "length": np.geomspace(step, 4.0 * width, 16),
            "tau": np.geomspace(0.1 * scale, 10.0 * scale, 8),
        }
    xscale = max(float(np.sqrt(np.mean(np.sum(X ** 2, axis=1)))), 1e-12)
    yscale = max(float(np.sqrt(np.mean(y ** 2))), 1e-12)
    # f = w.x with |w| ~ yscale/xscale, and prior var of f ~ xscale^2/l^2.
    centre = xscale / yscale
    return {"length": np.geomspace(centre / 100.0, centre * 100.0, 8)}


def gp_fit(
    X,
    y,
    kind: KernelKind = "se",
    jitter: float = 1e-10,
    params: dict | None = None,
) -> GpModel:
    """Fit GP weights, choosing hyperparameters by log marginal likelihood.

    ``jitter`` is relative to the mean Gram diagonal and is escalated by 10x
    (up to 1e-4) whenever the Cholesky factorization fails. Hyperparameters
    are taken from a log-spaced grid followed by a coordinate refinement in
    log space, unless ``params`` fixes them. Because targets are treated as
    noise-free, settings whose jitter shifts any training-point prediction by
    more than ``1e-6 * max|y|`` are skipped when an alternative exists.
    """
    X = _as_points(X)
    y = np.asarray(y, float).reshape(-1)
    if X.shape[0] < 2:
        raise ValueError("GP fit needs at least two training points")
    if y.shape[0] != X.shape[0]:
        raise ValueError("inputs and targets have different lengths")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite training data")
    X = X.copy()
    y = y.copy()

    if params is not None:
        params = {k: float(v) for k, v in params.items()}
        return _final_model(kind, params, X, y, jitter)

    grid = _hyper_grid(kind, X, y)
    names = list(grid)
    if not np.any(y):
        best = {k: float(v[len(v) // 2]) for k, v in grid.items()}
        return _final_model(kind, best, X, y, jitter)

    ymax = float(np.max(np.abs(y)))
    strict = [True]

    def score(p: dict) -> float:
        try:
            alpha, j, lml = _fit_fixed(kind, p, X, y, jitter)
        except GpFitError:
            return -np.inf
        # the data are noise-free: settings so smooth that the jitter visibly
        # stops the GP from interpolating are rejected
        if strict[0] and j * float(np.max(np.abs(alpha))) > INTERP_TOL * ymax:
            return -np.inf
        return lml

    best, best_score = None, -np.inf
    combos = np.array(np.meshgrid(*grid.values(), indexing="ij")).reshape(len(names), -1).T
    for relax in (False, True):
        strict[0] = not relax
        for combo in combos:
            p = dict(zip(names, (float(v) for v in combo)))
            s = score(p)
            if s > best_score:
                best, best_score = p, s
        if best is not None:
            break
    if best is None:
        raise GpFitError("no hyperparameter setting gave a positive-definite Gram matrix")

    # coordinate refinement in log2 space
    for step in (0.5, 0.25, 0.125, 0.0625):
        improved = True
        while improved:
            improved = False
            for name in names:
                for sign in (-1.0, 1.0):
                    trial = dict(best)
                    trial[name] = best[name] * 2.0 ** (sign * step)
                    s = score(trial)
                    if s > best_score + 1e-12 * abs(best_score):
                        best, best_score, improved = trial, s, True
    return _final_model(kind, best, X, y, jitter)


def gp_predict(model: GpModel, x_star, *, with_flag: bool = False):
    """Posterior mean at ``x_star``; optionally also an in-hull mask.

    Points outside the convex hull of the training inputs are predicted
    anyway but logged, since the surrogate is extrapolating there.
    """
    q = _as_points(x_star)
    if q.shape[1] != model.dim:
        if model.dim == 1:
            q = q.reshape(-1, 1)
        else:
            q = q.reshape(-1, model.dim)
    values = kernel_eval(model.kind, model.params, q, model.X).T
    out = model.alpha @ values
    inside = model.in_hull(q)
    if not np.all(inside):
        logger.debug("GP prediction outside the training hull at %d point(s)", int(np.sum(~inside)))
    if np.ndim(x_star) == 0 or (np.ndim(x_star) == 1 and model.dim > 1):
        out = float(out[0])
        inside = bool(inside[0])
    return (out, inside) if with_flag else out


# ------------------------------------------------------------ piecewise linear


@dataclass(frozen=True, eq=False)
class PwlFunction:
    """Continuous piecewise-linear function on ``[x_0, x_S]``."""

    x: np.ndarray
    y: np.ndarray
    max_error: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, float)
        y = np.asarray(self.y, float)
        if x.ndim != 1 or x.size < 2 or x.shape != y.shape:
            raise ValueError("a PWL function needs matching breakpoint and value vectors of length >= 2")
        if np.any(np.diff(x) <= 0):
            raise ValueError("PWL breakpoints must be strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def segments(self) -> int:
        return self.x.size - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.x[-1])

    def __call__(self, v):
        v_arr = np.asarray(v, float)
        lo, hi = self.domain
        tol = 1e-9 * max(1.0, hi - lo)
        if np.any(v_arr < lo - tol) or np.any(v_arr > hi + tol):
            raise ValueError(f"PWL evaluated outside its domain [{lo}, {hi}]")
        out = np.interp(v_arr, self.x, self.y)
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "y": self.y.tolist(), "max_error": float(self.max_error)}

    @classmethod
    def from_dict(cls, d: dict) -> "PwlFunction":
        return cls(np.asarray(d["x"], float), np.asarray(d["y"], float), float(d.get("max_error", 0.0)))


def pwl_approximate(func, lo: float, hi: float, segments: int, *, dense: int = 4001,
                    floor: float | None = None) -> tuple[PwlFunction, float]:
    """Interpolate ``func`` at uniform breakpoints and measure the worst gap.

    Returns the PWL function (with ``max_error`` against ``func`` on a dense
    grid) and the largest amount any breakpoint value was raised by ``floor``.
    """
    if segments < 1:
        raise ValueError("need at least one PWL segment")
    if not hi > lo:
        raise ValueError("empty PWL domain")
    xs = np.linspace(lo, hi, segments + 1)
    ys = np.asarray(func(xs), float)
    clipped = 0.0
    if floor is not None:
        clipped = float(np.max(np.maximum(floor - ys, 0.0)))
        ys = np.maximum(ys, floor)
    grid = np.union1d(np.linspace(lo, hi, dense), xs)
    err = float(np.max(np.abs(np.interp(grid, xs, ys) - np.asarray(func(grid), float))))
    return PwlFunction(xs, ys, err), clipped


# ------------------------------------------------------------- training data


def gamma0(epsilon: float, rule: GammaRule = "gaussian") -> float:
    """Standard-deviation multiplier of the rough margin approximation."""
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    if rule == "gaussian":
        return float(stats.norm.ppf(1.0 - epsilon))
    if rule == "cantelli":
        return math.sqrt((1.0 - epsilon) / epsilon)
    raise ValueError(f"unknown gamma rule {rule!r}")


def constraint_labels(case: GridCase) -> list[tuple[str, int]]:
    """(kind, element id) for every chance constraint, in stacking order."""
    out = []
    for kind in CONSTRAINT_KINDS:
        ids = case.line_ids if kind.startswith("line") else case.gen_ids
        out.extend((kind, int(i)) for i in ids)
    return out


@dataclass(frozen=True, eq=False)
class MomentSamples:
    """Per-farm cap grid and truncated moments (one column per farm)."""

    caps: list[np.ndarray]
    mu: list[np.ndarray]
    sigma: list[np.ndarray]
    wc0: np.ndarray
    t_wc: np.ndarray
    n: int


def gen_moment_samples(scenarios: ScenarioSet, case: GridCase, wc0=None, t_wc=None,
                       steps: int = 20) -> MomentSamples:
    """Enumerate caps ``wc0 + k t_wc <= W_max`` per farm and record moments.

    ``wc0`` defaults to the forecast and ``t_wc`` to ``(W_max - wc0)/steps``.
    """
    if scenarios.n_wind != case.n_wind:
        raise ValueError(f"scenario set has {scenarios.n_wind} farms, case has {case.n_wind}")
    wc0 = case.w_fc.copy() if wc0 is None else np.broadcast_to(np.asarray(wc0, float), (case.n_wind,)).copy()
    if np.any(wc0 < case.w_fc - 1e-9):
        raise ValueError("wc0 below the forecast")
    if np.any(wc0 > case.w_max + 1e-9):
        raise ValueError("empty cap grid: wc0 exceeds W_max")
    if t_wc is None:
        t_wc = np.where(case.w_max > wc0, (case.w_max - wc0) / steps, 1.0)
    t_wc = np.broadcast_to(np.asarray(t_wc, float), (case.n_wind,)).copy()
    if np.any(t_wc <= 0):
        raise ValueError("cap step must be positive")
    caps, mus, sigmas = [], [], []
    for i in range(case.n_wind):
        count = int(math.floor((case.w_max[i] - wc0[i]) / t_wc[i] + 1e-9)) + 1
        grid = wc0[i] + t_wc[i] * np.arange(count)
        grid = np.minimum(grid, case.w_max[i])
        col = ScenarioSet(scenarios.deviations[:, [i]], scenarios.source)
        mu = np.empty(count)
        sd = np.empty(count)
        for k, cap in enumerate(grid):
            st = truncated_stats(col, cap, case.w_fc[i])
            mu[k], sd[k] = st.mu[0], st.sigma[0]
        caps.append(grid)
        mus.append(mu)
        sigmas.append(sd)
    return MomentSamples(caps, mus, sigmas, wc0, t_wc, scenarios.n)


def rough_margins(mu: np.ndarray, sigma: np.ndarray, sens: Sensitivities, gamma: float) -> np.ndarray:
    """Moment-based margin approximation for every chance constraint, stacked."""
    k = sens.k_matrix
    beta = sens.beta
    spread_line = np.sqrt(np.sum((k * sigma[None, :]) ** 2, axis=1))
    kmu = k @ mu
    smu = float(np.sum(mu))
    spread_gen = beta * math.sqrt(float(np.sum(sigma ** 2)))
    return np.concatenate([
        kmu + gamma * spread_line,
        -kmu + gamma * spread_line,
        -beta * smu + gamma * spread_gen,
        beta * smu + gamma * spread_gen,
    ])


@dataclass(frozen=True, eq=False)
class KappaSamples:
    """Compensation-term training set; rows are cap vectors."""

    caps: np.ndarray      # K x n_wind
    kappa: np.ndarray     # K x n_constraints
    um: np.ndarray        # empirical margins
    rough: np.ndarray     # rough approximation
    mu: np.ndarray        # K x n_wind truncated means used
    sigma: np.ndarray
    gamma0: float
    n_diagonal: int


def _lhs_caps(lo: np.ndarray, hi: np.ndarray, count: int, seed: int) -> np.ndarray:
    sampler = qmc.LatinHypercube(d=lo.size, seed=seed)
    return lo + sampler.random(count) * (hi - lo)


def gen_kappa_samples(
    scenarios: ScenarioSet,
    case: GridCase,
    sens: Sensitivities,
    moments: MomentSamples,
    gamma: float,
    epsilon: float,
    *,
    n_lhs: int = 64,
    seed: int = 0,
) -> KappaSamples:
    """Empirical margins, rough terms and kappa at every training cap vector.

    The diagonal grid moves every farm's cap together (k-th moment grid
    point of each farm); with more than one farm ``n_lhs`` Latin-hypercube
    points over the cap box are added so a multivariate affine fit is
    determined.
    """
    if scenarios.n_wind != case.n_wind or len(moments.caps) != case.n_wind:
        raise ValueError("scenario set, moments and case disagree on the number of farms")
    n_diag = max(len(c) for c in moments.caps)
    rows = [np.array([c[min(k, len(c) - 1)] for c in moments.caps]) for k in range(n_diag)]
    if case.n_wind > 1 and n_lhs > 0:
        rows.extend(_lhs_caps(moments.wc0, case.w_max, n_lhs, seed))
    caps = np.array(rows)
    kap, ums, roughs, mus, sds = [], [], [], [], []
    for wc in caps:
        capped = capped_deviations(scenarios, wc, case.w_fc)
        mu = capped.mean(axis=0)
        sd = capped.std(axis=0, ddof=1)
        dpf = delta_power_flows(sens.k_matrix, capped)
        dres = delta_reserves(sens.beta, capped)
        um = np.concatenate([
            np.atleast_1d(empirical_margin(dpf, epsilon, "upper")),
            -np.atleast_1d(empirical_margin(dpf, epsilon, "lower")),
            np.atleast_1d(empirical_margin(dres, epsilon, "upper")),
            -np.atleast_1d(empirical_margin(dres, epsilon, "lower")),
        ])
        rough = rough_margins(mu, sd, sens, gamma)
        kap.append(um - rough)
        ums.append(um)
        roughs.append(rough)
        mus.append(mu)
        sds.append(sd)
    return KappaSamples(caps, np.array(kap), np.array(ums), np.array(roughs),
                        np.array(mus), np.array(sds), float(gamma), n_diag)


# ---------------------------------------------------------------------- bundle


@dataclass(eq=False)
class SurrogateBundle:
    """Everything the scheduling model needs from training, serializable."""

    epsilon: float
    gamma_rule: str
    gamma0: float
    w_fc: np.ndarray
    w_max: np.ndarray
    mu_pwl: list[PwlFunction]
    sigma_pwl: list[PwlFunction]
    mu_gp: list[GpModel]
    sigma_gp: list[GpModel]
    kappa_coef: np.ndarray                 # n_constraints x n_wind
    kappa_length: np.ndarray               # linear-kernel length per constraint
    labels: list[tuple[str, int]]
    kappa_caps: np.ndarray                 # training inputs kept for SE re-fits
    kappa_values: np.ndarray
    meta: dict = field(default_factory=dict)
    version: int = BUNDLE_VERSION

    @property
    def n_wind(self) -> int:
        return len(self.mu_pwl)

    @property
    def n_constraints(self) -> int:
        return self.kappa_coef.shape[0]

    def kappa(self, wc) -> np.ndarray:
        """Affine compensation terms at cap vector ``wc`` (all constraints)."""
        return self.kappa_coef @ np.broadcast_to(np.asarray(wc, float), (self.n_wind,))

    def mu_at(self, wc) -> np.ndarray:
        wc = np.broadcast_to(np.asarray(wc, float), (self.n_wind,))
        return np.array([f(w) for f, w in zip(self.mu_pwl, wc)])

    def sigma_at(self, wc) -> np.ndarray:
        wc = np.broadcast_to(np.asarray(wc, float), (self.n_wind,))
        return np.array([f(w) for f, w in zip(self.sigma_pwl, wc)])

    def check_case(self, case: GridCase) -> None:
        if self.n_wind != case.n_wind:
            raise ValueError(f"bundle has {self.n_wind} farms, case has {case.n_wind}")
        if self.labels != constraint_labels(case):
            raise ValueError("bundle constraints do not match the case lines/generators")
        if not (np.allclose(self.w_fc, case.w_fc) and np.allclose(self.w_max, case.w_max)):
            raise ValueError("bundle cap domain does not match the case wind farms")

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "epsilon": self.epsilon,
            "gamma_rule": self.gamma_rule,
            "gamma0": self.gamma0,
            "w_fc": self.w_fc.tolist(),
            "w_max": self.w_max.tolist(),
            "farms": [
                {
                    "mu_pwl": m.to_dict(),
                    "sigma_pwl": s.to_dict(),
                    "mu_gp": mg.to_dict(),
                    "sigma_gp": sg.to_dict(),
                }
                for m, s, mg, sg in zip(self.mu_pwl, self.sigma_pwl, self.mu_gp, self.sigma_gp)
            ],
            "kappa": {
                "labels": [list(lbl) for lbl in self.labels],
                "coef": self.kappa_coef.tolist(),
                "length": self.kappa_length.tolist(),
                "train_caps": self.kappa_caps.tolist(),
                "train_values": self.kappa_values.tolist(),
            },
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateBundle":
        if d.get("version") != BUNDLE_VERSION:
            raise ValueError(f"unsupported bundle version {d.get('version')!r}")
        k = d["kappa"]
        n_wind = len(d["w_fc"])
        return cls(
            epsilon=float(d["epsilon"]),
            gamma_rule=d["gamma_rule"],
            gamma0=float(d["gamma0"]),
            w_fc=np.asarray(d["w_fc"], float),
            w_max=np.asarray(d["w_max"], float),
            mu_pwl=[PwlFunction.from_dict(f["mu_pwl"]) for f in d["farms"]],
            sigma_pwl=[PwlFunction.from_dict(f["sigma_pwl"]) for f in d["farms"]],
            mu_gp=[GpModel.from_dict(f["mu_gp"]) for f in d["farms"]],
            sigma_gp=[GpModel.from_dict(f["sigma_gp"]) for f in d["farms"]],
            kappa_coef=np.asarray(k["coef"], float).reshape(-1, n_wind),
            kappa_length=np.asarray(k["length"], float),
            labels=[(str(a), int(b)) for a, b in k["labels"]],
            kappa_caps=np.asarray(k["train_caps"], float).reshape(-1, n_wind),
            kappa_values=np.asarray(k["train_values"], float).reshape(len(k["train_caps"]), -1),
            meta=d.get("meta", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SurrogateBundle":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _fit_kappa(caps: np.ndarray, values: np.ndarray, jitter: float) -> tuple[np.ndarray, np.ndarray]:
    coef = np.zeros((values.shape[1], caps.shape[1]))
    length = np.ones(values.shape[1])
    for c in range(values.shape[1]):
        model = gp_fit(caps, values[:, c], kind="linear", jitter=jitter)
        coef[c] = model.affine_weights()
        length[c] = model.params["length"]
    return coef, length


def build_bundle(
    case: GridCase,
    moments: MomentSamples,
    kappa: KappaSamples,
    epsilon: float,
    *,
    pwl_segments: int = 10,
    gamma_rule: GammaRule = "gaussian",
    jitter: float = 1e-10,
    meta: dict | None = None,
) -> SurrogateBundle:
    """Fit moment and kappa surrogates and linearize the moment curves.

    The mean and standard-deviation curves get SE-kernel GPs which are then
    interpolated at ``pwl_segments + 1`` uniform breakpoints over
    ``[W_fc, W_max]``; the sigma approximation is floored at zero.
    """
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    g = gamma0(epsilon, gamma_rule)
    if abs(g - kappa.gamma0) > 1e-12:
        raise ValueError("kappa samples were generated with a different gamma0")
    mu_pwl, sigma_pwl, mu_gp, sigma_gp = [], [], [], []
    clip_report = []
    for i in range(case.n_wind):
        lo, hi = float(case.w_fc[i]), float(case.w_max[i])
        try:
            mg = gp_fit(moments.caps[i], moments.mu[i], "se", jitter)
            sg = gp_fit(moments.caps[i], moments.sigma[i], "se", jitter)
        except GpFitError as exc:
            raise GpFitError(f"wind farm {case.wind_ids[i]}: {exc}") from exc
        mp, _ = pwl_approximate(lambda v, m=mg: gp_predict(m, v), lo, hi, pwl_segments)
        sp, clipped = pwl_approximate(lambda v, m=sg: gp_predict(m, v), lo, hi, pwl_segments, floor=0.0)
        smax = float(np.max(np.abs(moments.sigma[i]))) if moments.sigma[i].size else 0.0
        if clipped > 1e-6 * max(smax, 1e-12) and smax > 0:
            logger.warning("farm %s: sigma surrogate clipped at zero by %.3g MW", case.wind_ids[i], clipped)
        clip_report.append(clipped)
        mu_pwl.append(mp)
        sigma_pwl.append(sp)
        mu_gp.append(mg)
        sigma_gp.append(sg)
    try:
        coef, length = _fit_kappa(kappa.caps, kappa.kappa, jitter)
    except GpFitError as exc:
        raise GpFitError(f"kappa fit: {exc}") from exc
    identity = float(np.max(np.abs(kappa.rough + kappa.kappa - kappa.um))) if kappa.um.size else 0.0
    info = {
        "wc0": moments.wc0.tolist(),
        "t_wc": moments.t_wc.tolist(),
        "n_train": int(moments.n),
        "grid_points": [int(len(c)) for c in moments.caps],
        "kappa_points": int(kappa.caps.shape[0]),
        "kappa_diagonal_points": int(kappa.n_diagonal),
        "pwl_segments": int(pwl_segments),
        "mu_pwl_max_error": [p.max_error for p in mu_pwl],
        "sigma_pwl_max_error": [p.max_error for p in sigma_pwl],
        "sigma_clip": clip_report,
        "identity_residual": identity,
    }
    if meta:
        info.update(meta)
    return SurrogateBundle(
        epsilon=float(epsilon),
        gamma_rule=gamma_rule,
        gamma0=g,
        w_fc=case.w_fc.copy(),
        w_max=case.w_max.copy(),
        mu_pwl=mu_pwl,
        sigma_pwl=sigma_pwl,
        mu_gp=mu_gp,
        sigma_gp=sigma_gp,
        kappa_coef=coef,
        kappa_length=length,
        labels=constraint_labels(case),
        kappa_caps=kappa.caps,
        kappa_values=kappa.kappa,
        meta=info,
    )
