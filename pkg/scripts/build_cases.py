"""Regenerate the bundled case files under src/ccerco/cases.

PJM 5-bus data are the standard MATPOWER ``case5`` arrays, typed in below.
The IEEE 118-bus data come from pypower's ``case118`` (``pip install pypower``;
only needed to rebuild, not to use the package).

Usage: python3 scripts/build_cases.py [--out-dir DIR]
"""

from __future__ import annotations

import argparse
import json
import math
from pathlib import Path

import numpy as np

from ccerco.dispatch import solve_m1
from ccerco.grid import case_from_dict, compute_ptdf, compute_sensitivities, import_matpower

ROOT = Path(__file__).resolve().parents[1]

# MATPOWER case5 (PJM 5-bus). Columns follow the MATPOWER layout.
PJM5 = {
    "baseMVA": 100.0,
    "bus": np.array([
        [1, 2, 0.0, 0.0, 0, 0, 1, 1, 0, 230, 1, 1.1, 0.9],
        [2, 1, 300.0, 98.61, 0, 0, 1, 1, 0, 230, 1, 1.1, 0.9],
        [3, 2, 300.0, 98.61, 0, 0, 1, 1, 0, 230, 1, 1.1, 0.9],
        [4, 3, 400.0, 131.47, 0, 0, 1, 1, 0, 230, 1, 1.1, 0.9],
        [5, 2, 0.0, 0.0, 0, 0, 1, 1, 0, 230, 1, 1.1, 0.9],
    ]),
    "gen": np.array([
        [1, 40.0, 0, 30, -30, 1, 100, 1, 40.0, 0],
        [1, 170.0, 0, 127.5, -127.5, 1, 100, 1, 170.0, 0],
        [3, 323.49, 0, 390, -390, 1, 100, 1, 520.0, 0],
        [4, 0.0, 0, 150, -150, 1, 100, 1, 200.0, 0],
        [5, 466.51, 0, 450, -450, 1, 100, 1, 600.0, 0],
    ]),
    "branch": np.array([
        [1, 2, 0.00281, 0.0281, 0.00712, 400, 400, 400, 0, 0, 1, -360, 360],
        [1, 4, 0.00304, 0.0304, 0.00658, 0, 0, 0, 0, 0, 1, -360, 360],
        [1, 5, 0.00064, 0.0064, 0.03126, 0, 0, 0, 0, 0, 1, -360, 360],
        [2, 3, 0.00108, 0.0108, 0.01852, 0, 0, 0, 0, 0, 1, -360, 360],
        [3, 4, 0.00297, 0.0297, 0.00674, 0, 0, 0, 0, 0, 1, -360, 360],
        [4, 5, 0.00297, 0.0297, 0.00674, 240, 240, 240, 0, 0, 1, -360, 360],
    ]),
    "gencost": np.array([
        [2, 0, 0, 2, 14, 0],
        [2, 0, 0, 2, 15, 0],
        [2, 0, 0, 2, 30, 0],
        [2, 0, 0, 2, 40, 0],
        [2, 0, 0, 2, 10, 0],
    ]),
}

# Wind capacity is not given for either case; it bounds the cap domain and is
# set well above forecast + 3 std so the untruncated distribution is reachable.
PJM5_WIND = [
    {"id": 1, "bus": 2, "forecast": 200.0, "capacity": 1200.0,
     "deviation_mean": 0.0, "deviation_std": 200.0},
]

IEEE118_WIND = [
    {"id": i + 1, "bus": bus, "forecast": 200.0, "capacity": 500.0,
     "deviation_mean": 0.0, "deviation_std": std}
    for i, (bus, std) in enumerate([(2, 30.0), (34, 40.0), (80, 40.0), (110, 60.0)])
]

# Thermal ratings for the 118-bus system are absent from the source data.
# Rule used here: take the LIMITED_COUNT lines with the largest wind
# sensitivity sum_i |K_li| * std_i, and rate each at
# max(1.2 * |deterministic-dispatch flow|, 100 MW), rounded up to 10 MW. All
# other branches stay unlimited. This makes several line chance constraints
# bind while keeping the fixed-moment baseline feasible.
LIMITED_COUNT = 10
LIMIT_FACTOR = 1.2
LIMIT_FLOOR = 100.0


def build_pjm5() -> dict:
    case = import_matpower(PJM5, PJM5_WIND, name="pjm5")
    # Gen 2 limit and line 6 limit as modified for the wind study.
    case["generators"][1]["p_max"] = 170.0
    case["lines"][5]["limit"] = 240.0
    return case


def _derive_limits(data: dict) -> dict[int, float]:
    case = case_from_dict(data)
    sens = compute_sensitivities(case)
    zero = np.zeros(case.n_wind)
    det = solve_m1(case, sens, mu=zero, sigma=zero)
    inj = (np.bincount(case.gen_bus, det.p_sc, case.n_buses)
           + np.bincount(case.wind_bus, case.w_fc, case.n_buses) - case.demand)
    flow = compute_ptdf(case) @ inj
    exposure = np.abs(sens.k_matrix) @ case.wind_std
    chosen = np.argsort(-exposure, kind="stable")[:LIMITED_COUNT]
    return {
        int(case.line_ids[l]): float(10 * math.ceil(max(LIMIT_FACTOR * abs(flow[l]), LIMIT_FLOOR) / 10))
        for l in chosen
    }


def build_ieee118() -> dict:
    from pypower.case118 import case118

    mpc = case118()
    data = import_matpower(mpc, IEEE118_WIND, name="ieee118")
    limits = _derive_limits(data)
    return import_matpower(mpc, IEEE118_WIND, name="ieee118", line_limits=limits)


def _dump(data: dict) -> str:
    """JSON with one list entry per line (readable and diff-friendly)."""
    parts = []
    for key, value in data.items():
        if isinstance(value, list):
            body = ",\n".join("  " + json.dumps(v) for v in value)
            parts.append(f' {json.dumps(key)}: [\n{body}\n ]')
        else:
            parts.append(f" {json.dumps(key)}: {json.dumps(value)}")
    return "{\n" + ",\n".join(parts) + "\n}\n"


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path, default=ROOT / "src" / "ccerco" / "cases")
    ap.add_argument("--only", choices=["pjm5", "ieee118"])
    args = ap.parse_args(argv)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    builders = {"pjm5": build_pjm5, "ieee118": build_ieee118}
    for name, build in builders.items():
        if args.only and name != args.only:
            continue
        data = build()
        case = case_from_dict(data)  # validates
        ptdf = compute_ptdf(case)
        path = args.out_dir / f"{name}.json"
        path.write_text(_dump(data))
        print(f"{path}: {case.summary()}, max |PTDF| = {np.abs(ptdf).max():.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
