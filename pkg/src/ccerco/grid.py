"""Network cases, DC power-transfer distribution factors and wind sensitivities.

A case is a single JSON document::

    {
      "name": "pjm5",
      "base_mva": 100.0,
      "slack_bus": 4,
      "buses":      [{"id": 1, "demand": 0.0}, ...],
      "lines":      [{"id": 1, "from": 1, "to": 2, "x": 0.0281, "limit": 400.0}, ...],
      "generators": [{"id": 1, "bus": 1, "p_min": 0, "p_max": 40,
                      "cost_energy": 14.0, "cost_reserve": 2.8}, ...],
      "wind_farms": [{"id": 1, "bus": 2, "forecast": 200, "capacity": 1200,
                      "deviation_mean": 0, "deviation_std": 200}, ...]
    }

Powers are MW, reactances p.u. on ``base_mva``, energy costs $/MWh and reserve
costs $/MW. Line flows are positive in the ``from`` -> ``to`` direction.
"""

from __future__ import annotations

import json
import math
import re
from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import numpy as np

__all__ = [
    "CaseError",
    "UNLIMITED_RATING",
    "GridCase",
    "Sensitivities",
    "bundled_case_path",
    "case_from_dict",
    "case_to_dict",
    "compute_ptdf",
    "compute_sensitivities",
    "import_matpower",
    "load_case",
    "parse_matpower_file",
    "participation_factors",
    "save_case",
    "sensitivity_k",
]

BUNDLED_CASES = ("pjm5", "ieee118")

# Ratings at or above this value mark a branch as unconstrained (MATPOWER
# uses 0 for "no limit"; the importer substitutes this number).
UNLIMITED_RATING = 9900.0


class CaseError(ValueError):
    """Raised for malformed or physically inconsistent case data."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True, eq=False)
class GridCase:
    """Immutable network description; arrays are indexed by position, not id."""

    name: str
    base_mva: float
    bus_ids: tuple[int, ...]
    demand: np.ndarray
    slack: int  # position of the slack bus
    line_ids: tuple[int, ...]
    line_from: np.ndarray
    line_to: np.ndarray
    reactance: np.ndarray
    line_limit: np.ndarray
    gen_ids: tuple[int, ...]
    gen_bus: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    cost_energy: np.ndarray
    cost_reserve: np.ndarray
    wind_ids: tuple[int, ...]
    wind_bus: np.ndarray
    w_fc: np.ndarray
    w_max: np.ndarray
    wind_mean: np.ndarray
    wind_std: np.ndarray

    def __post_init__(self):
        for value in self.__dict__.values():
            if isinstance(value, np.ndarray):
                value.setflags(write=False)

    @property
    def n_buses(self) -> int:
        return len(self.bus_ids)

    @property
    def n_lines(self) -> int:
        return len(self.line_ids)

    @property
    def n_gens(self) -> int:
        return len(self.gen_ids)

    @property
    def n_wind(self) -> int:
        return len(self.wind_ids)

    @property
    def slack_bus(self) -> int:
        return self.bus_ids[self.slack]

    def gen_incidence(self) -> np.ndarray:
        """Bus-by-generator 0/1 matrix."""
        m = np.zeros((self.n_buses, self.n_gens))
        m[self.gen_bus, np.arange(self.n_gens)] = 1.0
        return m

    def wind_incidence(self) -> np.ndarray:
        m = np.zeros((self.n_buses, self.n_wind))
        m[self.wind_bus, np.arange(self.n_wind)] = 1.0
        return m

    def line_index(self, line_id: int) -> int:
        try:
            return self.line_ids.index(int(line_id))
        except ValueError:
            raise KeyError(f"no line with id {line_id}") from None

    def gen_index(self, gen_id: int) -> int:
        try:
            return self.gen_ids.index(int(gen_id))
        except ValueError:
            raise KeyError(f"no generator with id {gen_id}") from None

    def limited_lines(self) -> np.ndarray:
        """Positions of lines whose rating is below the unlimited marker."""
        return np.flatnonzero(self.line_limit < UNLIMITED_RATING)

    def summary(self) -> str:
        farms = "wind farm" if self.n_wind == 1 else "wind farms"
        return (
            f"{self.n_buses} buses, {self.n_lines} lines, "
            f"{self.n_gens} generators, {self.n_wind} {farms}"
        )


@dataclass(frozen=True, eq=False)
class Sensitivities:
    beta: np.ndarray  # participation factor per generator
    k_matrix: np.ndarray  # lines x wind farms
    ptdf: np.ndarray  # lines x buses

    def __post_init__(self):
        for arr in (self.beta, self.k_matrix, self.ptdf):
            arr.setflags(write=False)


# ---------------------------------------------------------------------------
# loading and validation


def bundled_case_path(name: str) -> Path:
    if name not in BUNDLED_CASES:
        raise CaseError("", f"unknown bundled case {name!r}; choose from {BUNDLED_CASES}")
    return Path(str(resources.files("ccerco") / "cases" / f"{name}.json"))


def load_case(path: str | Path) -> GridCase:
    """Read and validate a case file.

    ``path`` may also be the name of a bundled case (``pjm5``, ``ieee118``).
    """
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED_CASES:
        p = bundled_case_path(str(path))
    if not p.exists():
        raise FileNotFoundError(f"case file not found: {path}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CaseError("", f"invalid JSON ({exc})") from exc
    return case_from_dict(data, default_name=p.stem)


def save_case(case: GridCase, path: str | Path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=2) + "\n")


def _require(entry: Any, key: str, where: str) -> Any:
    if not isinstance(entry, dict):
        raise CaseError(where, "expected an object")
    if key not in entry:
        raise CaseError(f"{where}.{key}" if where else key, "missing required field")
    return entry[key]


def _number(entry: dict, key: str, where: str, default: float | None = None) -> float:
    if default is not None and key not in entry:
        return float(default)
    value = _require(entry, key, where)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseError(f"{where}.{key}", f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise CaseError(f"{where}.{key}", "must be finite")
    return float(value)


def _integer(entry: dict, key: str, where: str) -> int:
    value = _require(entry, key, where)
    if isinstance(value, bool) or not isinstance(value, int):
        raise CaseError(f"{where}.{key}", f"expected an integer id, got {value!r}")
    return value


def _list(data: dict, key: str) -> list:
    value = _require(data, key, "")
    if not isinstance(value, list):
        raise CaseError(key, "expected a list")
    return value


def case_from_dict(data: dict, default_name: str = "case") -> GridCase:
    if not isinstance(data, dict):
        raise CaseError("", "case must be a JSON object")
    buses = _list(data, "buses")
    lines = _list(data, "lines")
    gens = _list(data, "generators")
    farms = _list(data, "wind_farms")
    if not buses:
        raise CaseError("buses", "at least one bus required")

    bus_ids, demand = [], []
    for i, b in enumerate(buses):
        where = f"buses[{i}]"
        bid = _integer(b, "id", where)
        if bid in bus_ids:
            raise CaseError(f"{where}.id", f"duplicate bus id {bid}")
        bus_ids.append(bid)
        demand.append(_number(b, "demand", where))
    pos = {bid: k for k, bid in enumerate(bus_ids)}

    def bus_pos(entry: dict, key: str, where: str) -> int:
        bid = _integer(entry, key, where)
        if bid not in pos:
            raise CaseError(f"{where}.{key}", f"unknown bus {bid}")
        return pos[bid]

    slack_raw = data.get("slack_bus")
    if slack_raw is None:
        flagged = [i for i, b in enumerate(buses) if b.get("slack")]
        if not flagged:
            raise CaseError("slack_bus", "missing slack bus")
        if len(flagged) > 1:
            raise CaseError("slack_bus", "multiple slack buses flagged")
        slack = flagged[0]
    else:
        if isinstance(slack_raw, list):
            if len(slack_raw) != 1:
                raise CaseError("slack_bus", "multiple slack buses given" if slack_raw else "missing slack bus")
            slack_raw = slack_raw[0]
        if isinstance(slack_raw, bool) or not isinstance(slack_raw, int):
            raise CaseError("slack_bus", f"expected a bus id, got {slack_raw!r}")
        if slack_raw not in pos:
            raise CaseError("slack_bus", f"unknown bus {slack_raw}")
        flagged = [b["id"] for b in buses if b.get("slack") and b["id"] != slack_raw]
        if flagged:
            raise CaseError("slack_bus", f"multiple slack buses ({slack_raw} and {flagged[0]})")
        slack = pos[slack_raw]

    line_ids, lf, lt, xs, lim = [], [], [], [], []
    for i, ln in enumerate(lines):
        where = f"lines[{i}]"
        lid = _integer(ln, "id", where)
        if lid in line_ids:
            raise CaseError(f"{where}.id", f"duplicate line id {lid}")
        f, t = bus_pos(ln, "from", where), bus_pos(ln, "to", where)
        if f == t:
            raise CaseError(where, "line connects a bus to itself")
        x = _number(ln, "x", where)
        if x <= 0:
            raise CaseError(f"{where}.x", "reactance must be > 0")
        limit = _number(ln, "limit", where)
        if limit <= 0:
            raise CaseError(f"{where}.limit", "flow limit must be > 0")
        line_ids.append(lid)
        lf.append(f)
        lt.append(t)
        xs.append(x)
        lim.append(limit)

    gen_ids, gb, pmin, pmax, ce, cr = [], [], [], [], [], []
    for i, g in enumerate(gens):
        where = f"generators[{i}]"
        gid = _integer(g, "id", where)
        if gid in gen_ids:
            raise CaseError(f"{where}.id", f"duplicate generator id {gid}")
        lo, hi = _number(g, "p_min", where), _number(g, "p_max", where)
        if lo > hi:
            raise CaseError(f"{where}.p_min", f"p_min {lo} exceeds p_max {hi}")
        gen_ids.append(gid)
        gb.append(bus_pos(g, "bus", where))
        pmin.append(lo)
        pmax.append(hi)
        ce.append(_number(g, "cost_energy", where))
        cr.append(_number(g, "cost_reserve", where))

    wind_ids, wb, wfc, wmax, wmu, wsd = [], [], [], [], [], []
    for i, w in enumerate(farms):
        where = f"wind_farms[{i}]"
        wid = _integer(w, "id", where)
        if wid in wind_ids:
            raise CaseError(f"{where}.id", f"duplicate wind farm id {wid}")
        fc, cap = _number(w, "forecast", where), _number(w, "capacity", where)
        if fc < 0:
            raise CaseError(f"{where}.forecast", "forecast must be >= 0")
        if fc > cap:
            raise CaseError(f"{where}.forecast", f"forecast {fc} exceeds capacity {cap}")
        std = _number(w, "deviation_std", where, default=0.0)
        if std < 0:
            raise CaseError(f"{where}.deviation_std", "must be >= 0")
        wind_ids.append(wid)
        wb.append(bus_pos(w, "bus", where))
        wfc.append(fc)
        wmax.append(cap)
        wmu.append(_number(w, "deviation_mean", where, default=0.0))
        wsd.append(std)

    _check_connected(len(bus_ids), lf, lt, bus_ids)

    base = _number(data, "base_mva", "", default=100.0)
    if base <= 0:
        raise CaseError("base_mva", "must be > 0")
    name = data.get("name", default_name)

    def arr(v, dtype=float):
        return np.asarray(v, dtype=dtype)

    return GridCase(
        name=str(name),
        base_mva=base,
        bus_ids=tuple(bus_ids),
        demand=arr(demand),
        slack=slack,
        line_ids=tuple(line_ids),
        line_from=arr(lf, int),
        line_to=arr(lt, int),
        reactance=arr(xs),
        line_limit=arr(lim),
        gen_ids=tuple(gen_ids),
        gen_bus=arr(gb, int),
        p_min=arr(pmin),
        p_max=arr(pmax),
        cost_energy=arr(ce),
        cost_reserve=arr(cr),
        wind_ids=tuple(wind_ids),
        wind_bus=arr(wb, int),
        w_fc=arr(wfc),
        w_max=arr(wmax),
        wind_mean=arr(wmu),
        wind_std=arr(wsd),
    )


def _check_connected(n: int, lf: Iterable[int], lt: Iterable[int], bus_ids: list[int]) -> None:
    adj: list[list[int]] = [[] for _ in range(n)]
    for f, t in zip(lf, lt):
        adj[f].append(t)
        adj[t].append(f)
    seen = [False] * n
    seen[0] = True
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    if not all(seen):
        isolated = [bus_ids[i] for i in range(n) if not seen[i]]
        raise CaseError("lines", f"disconnected network; unreachable buses {isolated[:10]}")


def case_to_dict(case: GridCase) -> dict:
    b = case.bus_ids
    return {
        "name": case.name,
        "base_mva": case.base_mva,
        "slack_bus": case.slack_bus,
        "buses": [{"id": bid, "demand": float(d)} for bid, d in zip(b, case.demand)],
        "lines": [
            {"id": lid, "from": b[f], "to": b[t], "x": float(x), "limit": float(lim)}
            for lid, f, t, x, lim in zip(
                case.line_ids, case.line_from, case.line_to, case.reactance, case.line_limit
            )
        ],
        "generators": [
            {
                "id": gid,
                "bus": b[g],
                "p_min": float(lo),
                "p_max": float(hi),
                "cost_energy": float(ce),
                "cost_reserve": float(cr),
            }
            for gid, g, lo, hi, ce, cr in zip(
                case.gen_ids, case.gen_bus, case.p_min, case.p_max,
                case.cost_energy, case.cost_reserve,
            )
        ],
        "wind_farms": [
            {
                "id": wid,
                "bus": b[w],
                "forecast": float(fc),
                "capacity": float(cap),
                "deviation_mean": float(mu),
                "deviation_std": float(sd),
            }
            for wid, w, fc, cap, mu, sd in zip(
                case.wind_ids, case.wind_bus, case.w_fc, case.w_max, case.wind_mean, case.wind_std
            )
        ],
    }


# ---------------------------------------------------------------------------
# sensitivities


def compute_ptdf(case: GridCase) -> np.ndarray:
    """DC PTDF (lines x buses) with respect to the case's slack bus."""
    n, m = case.n_buses, case.n_lines
    b = 1.0 / case.reactance
    inc = np.zeros((m, n))
    inc[np.arange(m), case.line_from] = 1.0
    inc[np.arange(m), case.line_to] = -1.0
    bbus = inc.T @ (b[:, None] * inc)
    keep = np.array([i for i in range(n) if i != case.slack], dtype=int)
    bred = bbus[np.ix_(keep, keep)]
    try:
        # a near-zero pivot means an island or degenerate reactances
        cond = np.linalg.cond(bred) if keep.size else 1.0
        if not np.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError("ill-conditioned")
        x_red = np.linalg.solve(bred, np.eye(keep.size))
    except np.linalg.LinAlgError as exc:
        raise CaseError("lines", f"singular susceptance matrix ({exc})") from exc
    ptdf = np.zeros((m, n))
    ptdf[:, keep] = (b[:, None] * inc[:, keep]) @ x_red
    return ptdf


def participation_factors(case_or_pmax: GridCase | np.ndarray) -> np.ndarray:
    """Share of the system imbalance taken by each generator, in proportion to P_max."""
    pmax = case_or_pmax.p_max if isinstance(case_or_pmax, GridCase) else np.asarray(case_or_pmax, float)
    if pmax.size == 0 or np.any(pmax < 0) or not np.any(pmax > 0):
        raise ValueError("no balancing capacity")
    return pmax / pmax.sum()


def sensitivity_k(ptdf: np.ndarray, beta: np.ndarray, wind_buses, gen_buses) -> np.ndarray:
    """Net line-flow response to a unit deviation of each wind farm.

    The direct injection at the farm's bus is offset by the generators'
    participation response.
    """
    ptdf = np.asarray(ptdf, float)
    beta = np.asarray(beta, float)
    wind_buses = np.asarray(wind_buses, int)
    gen_buses = np.asarray(gen_buses, int)
    if beta.shape != gen_buses.shape:
        raise ValueError(f"beta has {beta.size} entries but there are {gen_buses.size} generator buses")
    if abs(beta.sum() - 1.0) > 1e-9:
        raise ValueError(f"participation factors sum to {beta.sum()}, expected 1")
    if wind_buses.size and (wind_buses.max() >= ptdf.shape[1] or gen_buses.max() >= ptdf.shape[1]):
        raise ValueError("bus index outside PTDF columns")
    response = ptdf[:, gen_buses] @ beta
    return ptdf[:, wind_buses] - response[:, None]


def compute_sensitivities(case: GridCase) -> Sensitivities:
    ptdf = compute_ptdf(case)
    beta = participation_factors(case)
    k = sensitivity_k(ptdf, beta, case.wind_bus, case.gen_bus)
    return Sensitivities(beta=beta, k_matrix=k, ptdf=ptdf)


def net_injection(case: GridCase, p_gen: np.ndarray, wind: np.ndarray) -> np.ndarray:
    """Bus injections (..., n_buses) from generator outputs and wind outputs."""
    p_gen = np.asarray(p_gen, float)
    wind = np.asarray(wind, float)
    inj = p_gen @ case.gen_incidence().T + wind @ case.wind_incidence().T
    return inj - case.demand


# ---------------------------------------------------------------------------
# MATPOWER import

_MPC_BLOCK = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_MPC_SCALAR = re.compile(r"mpc\.(\w+)\s*=\s*([-+0-9.eE]+)\s*;")


def parse_matpower_file(path: str | Path) -> dict[str, Any]:
    """Read the numeric blocks of a MATPOWER ``.m`` case into arrays."""
    text = Path(path).read_text()
    text = re.sub(r"%[^\n]*", "", text)
    mpc: dict[str, Any] = {}
    for key, value in _MPC_SCALAR.findall(text):
        mpc[key] = float(value)
    for key, body in _MPC_BLOCK.findall(text):
        rows = [r for r in re.split(r"[;\n]", body) if r.strip()]
        mpc[key] = np.array([[float(v) for v in r.replace(",", " ").split()] for r in rows])
    for key in ("bus", "branch", "gen"):
        if key not in mpc:
            raise CaseError(key, "MATPOWER block missing")
    return mpc


def import_matpower(
    mpc: dict[str, Any],
    wind_farms: list[dict],
    *,
    name: str = "case",
    reserve_cost_ratio: float = 0.2,
    unlimited_rating: float = UNLIMITED_RATING,
    line_limits: dict[int, float] | None = None,
    gen_overrides: dict[int, dict] | None = None,
) -> dict:
    """Convert a MATPOWER case dict to the JSON case schema.

    Energy cost is the average cost at full output for polynomial gencost rows
    (``c1 + c2 * P_max``); reserve cost is ``reserve_cost_ratio`` times that.
    Branches with zero rating get ``unlimited_rating``. Out-of-service
    branches and generators are dropped. Line ids are 1-based row positions.
    """
    bus, branch, gen = (np.atleast_2d(mpc[k]) for k in ("bus", "branch", "gen"))
    gencost = np.atleast_2d(mpc["gencost"]) if "gencost" in mpc else None
    base = float(mpc.get("baseMVA", 100.0))
    slack = [int(r[0]) for r in bus if int(r[1]) == 3]
    if len(slack) != 1:
        raise CaseError("bus", f"expected exactly one reference bus, found {len(slack)}")
    out = {
        "name": name,
        "base_mva": base,
        "slack_bus": slack[0],
        "buses": [{"id": int(r[0]), "demand": float(r[2])} for r in bus],
        "lines": [],
        "generators": [],
        "wind_farms": wind_farms,
    }
    line_limits = line_limits or {}
    for k, r in enumerate(branch, start=1):
        if r.shape[0] > 10 and r[10] == 0:
            continue
        rating = float(r[5]) if r[5] > 0 else unlimited_rating
        out["lines"].append(
            {"id": k, "from": int(r[0]), "to": int(r[1]), "x": float(r[3]),
             "limit": float(line_limits.get(k, rating))}
        )
    gen_overrides = gen_overrides or {}
    for k, r in enumerate(gen, start=1):
        if r[7] <= 0:
            continue
        pmax, pmin = float(r[8]), float(r[9])
        ce = 0.0
        if gencost is not None:
            row = gencost[k - 1]
            if int(row[0]) != 2:
                raise CaseError(f"gencost[{k - 1}]", "only polynomial cost rows are supported")
            ncost = int(row[3])
            coeffs = row[4 : 4 + ncost][::-1]  # c0, c1, c2, ...
            c1 = coeffs[1] if ncost > 1 else 0.0
            c2 = coeffs[2] if ncost > 2 else 0.0
            ce = float(c1 + c2 * pmax)
        entry = {
            "id": k, "bus": int(r[0]), "p_min": pmin, "p_max": pmax,
            "cost_energy": round(ce, 6), "cost_reserve": round(reserve_cost_ratio * ce, 6),
        }
        entry.update(gen_overrides.get(k, {}))
        out["generators"].append(entry)
    return out
