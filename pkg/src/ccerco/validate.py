"""Monte-Carlo certification of a schedule and cost reporting.

Violation frequencies are recomputed from raw case data: every scenario's
realized injections (scheduled output plus participation response, capped
wind, demand) are pushed through the PTDF matrix. Nothing from the
optimization model's constraint matrices is reused.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dispatch import DispatchSolution
from .grid import GridCase, Sensitivities, compute_ptdf
from .scenarios import ScenarioSet, capped_deviations

__all__ = [
    "CostBreakdown",
    "ViolationReport",
    "cost_report",
    "monte_carlo_violation",
    "realized_flows",
    "write_traces",
]

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class ViolationReport:
    """Per-constraint violation frequencies of one schedule on one scenario set."""

    line_max: np.ndarray
    line_min: np.ndarray
    gen_up: np.ndarray
    gen_dn: np.ndarray
    n: int
    seed: int | None
    training_seed: int | None = None
    warnings: list[str] = field(default_factory=list)
    line_ids: np.ndarray | None = None
    gen_ids: np.ndarray | None = None
    flows: np.ndarray | None = None      # N x n_lines realized flows (optional)
    outputs: np.ndarray | None = None    # N x n_gens realized outputs (optional)

    @property
    def max_transmission(self) -> float:
        vals = np.concatenate([self.line_max, self.line_min])
        return float(vals.max()) if vals.size else 0.0

    @property
    def max_generation(self) -> float:
        vals = np.concatenate([self.gen_up, self.gen_dn])
        return float(vals.max()) if vals.size else 0.0

    @property
    def max_violation(self) -> float:
        return max(self.max_transmission, self.max_generation)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "training_seed": self.training_seed,
            "warnings": list(self.warnings),
            "max_transmission_violation": self.max_transmission,
            "max_generation_violation": self.max_generation,
            "lines": [
                {"id": int(i), "upper": float(u), "lower": float(lo)}
                for i, u, lo in zip(self.line_ids, self.line_max, self.line_min)
            ],
            "generators": [
                {"id": int(i), "up": float(u), "down": float(d)}
                for i, u, d in zip(self.gen_ids, self.gen_up, self.gen_dn)
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def realized_flows(case: GridCase, sens: Sensitivities, sol: DispatchSolution, scenarios: ScenarioSet,
                   ptdf: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-scenario line flows, generator responses and capped deviations."""
    ptdf = compute_ptdf(case) if ptdf is None else ptdf
    capped = capped_deviations(scenarios, sol.wc, case.w_fc)
    response = -np.outer(capped.sum(axis=1), sens.beta)           # N x G
    outputs = sol.p_sc[None, :] + response
    inj = np.zeros((scenarios.n, case.n_buses))
    inj -= case.demand[None, :]
    for g, bus in enumerate(case.gen_bus):
        inj[:, bus] += outputs[:, g]
    for w, bus in enumerate(case.wind_bus):
        inj[:, bus] += case.w_fc[w] + capped[:, w]
    flows = inj @ ptdf.T
    return flows, response, capped


def monte_carlo_violation(sol: DispatchSolution, case: GridCase, sens: Sensitivities, scenarios: ScenarioSet,
                          *, training_seed: int | None = None, keep_traces: bool = False,
                          tol: float = 1e-6) -> ViolationReport:
    """Fraction of scenarios violating each line limit and reserve bound.

    A constraint counts as violated when it is exceeded by more than ``tol``
    MW. Capped deviations put probability mass exactly at the cap, so a
    reserve sized to the cap is binding in a large share of scenarios and
    solver round-off there must not be read as a violation.
    """
    flows, response, _ = realized_flows(case, sens, sol, scenarios)
    limit = case.line_limit[None, :]
    n = scenarios.n
    report = ViolationReport(
        line_max=np.mean(flows > limit + tol, axis=0),
        line_min=np.mean(flows < -limit - tol, axis=0),
        gen_up=np.mean(response > sol.r_up[None, :] + tol, axis=0),
        gen_dn=np.mean(response < -sol.r_dn[None, :] - tol, axis=0),
        n=n,
        seed=scenarios.seed,
        training_seed=training_seed,
        line_ids=np.asarray(case.line_ids),
        gen_ids=np.asarray(case.gen_ids),
    )
    if training_seed is not None and scenarios.seed is not None and training_seed == scenarios.seed:
        msg = f"validation seed {scenarios.seed} equals the training seed; frequencies are in-sample"
        logger.warning(msg)
        report.warnings.append(msg)
    if keep_traces:
        report.flows = flows
        report.outputs = sol.p_sc[None, :] + response
    return report


def write_traces(report: ViolationReport, case: GridCase, path: str | Path,
                 lines: list[int] = (), gens: list[int] = ()) -> None:
    """Per-scenario CSV of selected line flows and generator outputs (MW)."""
    if report.flows is None or report.outputs is None:
        raise ValueError("report was built without traces (keep_traces=True)")
    cols = [(f"line_{i}_flow_mw", report.flows[:, case.line_index(i)]) for i in lines]
    cols += [(f"gen_{i}_output_mw", report.outputs[:, case.gen_index(i)]) for i in gens]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario"] + [c for c, _ in cols])
        for k in range(report.n):
            w.writerow([k + 1] + [repr(float(v[k])) for _, v in cols])


@dataclass(frozen=True)
class CostBreakdown:
    energy: float
    reserve: float
    total_up: float
    total_dn: float

    @property
    def total(self) -> float:
        return self.energy + self.reserve

    def rows(self) -> list[tuple[str, float, str]]:
        return [
            ("Total operational cost", self.total, "$"),
            ("Energy cost", self.energy, "$"),
            ("Reserve cost", self.reserve, "$"),
            ("Total up reserve capacity", self.total_up, "MW"),
            ("Total down reserve capacity", self.total_dn, "MW"),
        ]


def cost_report(sol: DispatchSolution, case: GridCase, sens: Sensitivities, mu=None) -> CostBreakdown:
    """Expected energy cost at the wind mean ``mu`` (default: the solution's)."""
    mu = sol.mu if mu is None else np.asarray(mu, float)
    expected = sol.p_sc - sens.beta * float(np.sum(mu))
    return CostBreakdown(
        energy=float(case.cost_energy @ expected),
        reserve=float(case.cost_reserve @ (sol.r_up + sol.r_dn)),
        total_up=float(np.sum(sol.r_up)),
        total_dn=float(np.sum(sol.r_dn)),
    )
