"""Wind-deviation scenarios, curtailment-cap truncation and empirical margins."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

__all__ = [
    "CONSTRAINT_KINDS",
    "EmpiricalMargins",
    "ScenarioSet",
    "TruncatedStats",
    "apply_cap",
    "capped_deviations",
    "delta_power_flows",
    "delta_reserves",
    "empirical_margin",
    "empirical_margins",
    "margin_rank",
    "read_scenarios_csv",
    "sample_gaussian",
    "truncated_stats",
    "write_scenarios_csv",
]

CONSTRAINT_KINDS = ("line_max", "line_min", "gen_up", "gen_dn")


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """N x n_wind matrix of wind deviations (MW) plus where it came from."""

    deviations: np.ndarray
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        dev = np.array(self.deviations, dtype=float, ndmin=2)
        if dev.ndim != 2 or dev.shape[0] < 1:
            raise ValueError("a scenario set needs at least one row")
        if not np.all(np.isfinite(dev)):
            raise ValueError("scenario deviations must be finite")
        dev.setflags(write=False)
        object.__setattr__(self, "deviations", dev)

    @property
    def n(self) -> int:
        return self.deviations.shape[0]

    @property
    def n_wind(self) -> int:
        return self.deviations.shape[1]

    @property
    def seed(self) -> int | None:
        return self.source.get("seed")


def sample_gaussian(
    n: int,
    means,
    stds,
    seed: int,
    *,
    clamp: tuple[np.ndarray, np.ndarray] | None = None,
) -> ScenarioSet:
    """Independent Gaussian deviations per farm, reproducible from ``seed``.

    ``clamp=(w_fc, w_max)`` optionally limits each draw to physically possible
    output ``0 <= W_fc + dW <= W_max``; sampling is unbounded by default.
    """
    means = np.atleast_1d(np.asarray(means, float))
    stds = np.atleast_1d(np.asarray(stds, float))
    if n < 1:
        raise ValueError("n must be >= 1")
    if means.shape != stds.shape:
        raise ValueError("means and stds must have the same length")
    if np.any(stds < 0):
        raise ValueError("negative standard deviation")
    rng = np.random.default_rng(seed)
    dev = means + stds * rng.standard_normal((n, means.size))
    if clamp is not None:
        w_fc, w_max = (np.asarray(v, float) for v in clamp)
        dev = np.clip(dev, -w_fc, w_max - w_fc)
    source = {
        "kind": "gaussian",
        "seed": int(seed),
        "means": means.tolist(),
        "stds": stds.tolist(),
        "n": int(n),
        "clamped": clamp is not None,
    }
    return ScenarioSet(dev, source)


def read_scenarios_csv(path: str | Path) -> ScenarioSet:
    """Load a header-plus-rows CSV (``w1,...,wK``) of MW deviations."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: expected a header row and at least one scenario")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from exc
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: {data.shape[1]} columns but {len(header)} header names")
    return ScenarioSet(data, {"kind": "csv", "path": str(path), "columns": header, "n": len(data)})


def write_scenarios_csv(scenarios: ScenarioSet, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"w{i + 1}" for i in range(scenarios.n_wind)])
        for row in scenarios.deviations:
            w.writerow([repr(float(v)) for v in row])


def apply_cap(delta, wc, w_fc):
    """Realized deviation under a curtailment cap: ``min(delta, wc - w_fc)``."""
    wc = np.asarray(wc, float)
    w_fc = np.asarray(w_fc, float)
    if np.any(wc < w_fc):
        raise ValueError("curtailment cap below the forecast")
    out = np.minimum(np.asarray(delta, float), wc - w_fc)
    return out if out.ndim else float(out)


def capped_deviations(scenarios: ScenarioSet, wc, w_fc) -> np.ndarray:
    return apply_cap(scenarios.deviations, np.broadcast_to(wc, (scenarios.n_wind,)), w_fc)


@dataclass(frozen=True, eq=False)
class TruncatedStats:
    mu: np.ndarray
    sigma: np.ndarray
    cap: np.ndarray


def truncated_stats(scenarios: ScenarioSet, wc, w_fc) -> TruncatedStats:
    """Per-farm sample mean and (N-1) standard deviation of capped deviations."""
    if scenarios.n < 2:
        raise ValueError("need at least two scenarios for a standard deviation")
    capped = capped_deviations(scenarios, wc, w_fc)
    return TruncatedStats(
        mu=capped.mean(axis=0),
        sigma=capped.std(axis=0, ddof=1),
        cap=np.broadcast_to(np.asarray(wc, float), (scenarios.n_wind,)).copy(),
    )


def delta_power_flows(k_matrix: np.ndarray, capped: np.ndarray) -> np.ndarray:
    """Line-flow change per scenario (N x n_lines) caused by wind deviations."""
    k_matrix = np.atleast_2d(np.asarray(k_matrix, float))
    capped = np.atleast_2d(np.asarray(capped, float))
    if capped.shape[1] != k_matrix.shape[1]:
        raise ValueError(
            f"deviations have {capped.shape[1]} farms but the sensitivity matrix has {k_matrix.shape[1]}"
        )
    return capped @ k_matrix.T


def delta_reserves(beta: np.ndarray, capped: np.ndarray) -> np.ndarray:
    """Generator response per scenario (N x n_gens); positive means upward."""
    beta = np.asarray(beta, float)
    capped = np.atleast_2d(np.asarray(capped, float))
    if beta.ndim != 1:
        raise ValueError("beta must be a vector")
    return -np.outer(capped.sum(axis=1), beta)


def margin_rank(n: int, epsilon: float) -> int:
    """Order-statistic index ceil(eps*N) used for empirical margins."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if epsilon * n < 1.0 - 1e-9:
        raise ValueError("insufficient scenarios for requested risk level")
    return math.ceil(epsilon * n - 1e-9)


def empirical_margin(values, epsilon: float, side: Literal["upper", "lower"] = "upper"):
    """ceil(eps*N)-th largest (upper) or smallest (lower) scenario value.

    ``values`` may be 2-D, in which case scenarios run along axis 0 and one
    margin is returned per column.
    """
    values = np.asarray(values, float)
    n = values.shape[0]
    k = margin_rank(n, epsilon)
    if side == "upper":
        out = np.partition(values, n - k, axis=0)[n - k]
    elif side == "lower":
        out = np.partition(values, k - 1, axis=0)[k - 1]
    else:
        raise ValueError(f"side must be 'upper' or 'lower', got {side!r}")
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True, eq=False)
class EmpiricalMargins:
    """Empirical uncertainty margins of every chance constraint at one cap vector.

    Each margin is expressed as the tightening of the constraint bound, so a
    line is secure at level eps when ``PF_sc + line_max <= F`` and
    ``-PF_sc + line_min <= F``; reserves need ``R_up >= gen_up`` and
    ``R_dn >= gen_dn``.
    """

    line_max: np.ndarray
    line_min: np.ndarray
    gen_up: np.ndarray
    gen_dn: np.ndarray
    epsilon: float
    n: int
    wc: np.ndarray

    def by_kind(self, kind: str) -> np.ndarray:
        return getattr(self, kind)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.line_max, self.line_min, self.gen_up, self.gen_dn])


def empirical_margins(
    scenarios: ScenarioSet, wc, w_fc, k_matrix, beta, epsilon: float
) -> EmpiricalMargins:
    capped = capped_deviations(scenarios, wc, w_fc)
    dpf = delta_power_flows(k_matrix, capped)
    dres = delta_reserves(beta, capped)
    return EmpiricalMargins(
        line_max=np.atleast_1d(empirical_margin(dpf, epsilon, "upper")),
        line_min=-np.atleast_1d(empirical_margin(dpf, epsilon, "lower")),
        gen_up=np.atleast_1d(empirical_margin(dres, epsilon, "upper")),
        gen_dn=-np.atleast_1d(empirical_margin(dres, epsilon, "lower")),
        epsilon=epsilon,
        n=scenarios.n,
        wc=np.broadcast_to(np.asarray(wc, float), (scenarios.n_wind,)).copy(),
    )
