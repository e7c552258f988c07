"""Command-line entry point: ``ccerco {inspect,train,schedule,validate,report}``.

Exit codes: 0 success, 1 solver or model failure, 2 input error.

Settings come from (lowest to highest priority) built-in defaults, a JSON
``--config`` file whose keys mirror the long flag names (dashes or
underscores), and explicit flags. Every command that writes files also
writes ``manifest.json`` (config snapshot, seeds, versions, timings) next to
its outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .dispatch import (
    DispatchSolution,
    ModelError,
    ScheduleConfig,
    correct,
    solve_m0,
    solve_m1,
    train_bundle,
)
from .gp import GpFitError, SurrogateBundle
from .grid import CaseError, GridCase, compute_ptdf, compute_sensitivities, load_case
from .scenarios import ScenarioSet, margin_rank, read_scenarios_csv, sample_gaussian
from .validate import cost_report, monte_carlo_violation, write_traces

__all__ = ["RunConfig", "main"]

logger = logging.getLogger("ccerco")

EXIT_OK, EXIT_FAILURE, EXIT_INPUT = 0, 1, 2


class InputError(ValueError):
    """Bad user input; maps to exit code 2."""


@dataclass
class RunConfig:
    case: str = "pjm5"
    epsilon: float = 0.05
    seed: int = 1
    validate_seed: int | None = None
    n_train: int = 10000
    n_validate: int = 10000
    scenarios: str | None = None
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
    out_dir: str = "out"

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise InputError("epsilon must lie in (0, 0.5)")
        for name in ("n_train", "n_validate"):
            n = getattr(self, name)
            try:
                margin_rank(n, self.epsilon)
            except ValueError as exc:
                raise InputError(f"{name}={n} with epsilon={self.epsilon}: {exc}") from None
        if self.gamma_rule not in ("gaussian", "cantelli"):
            raise InputError(f"unknown gamma rule {self.gamma_rule!r}")
        if self.fix_caps not in ("free", "max"):
            raise InputError(f"--fix-caps must be free or max, got {self.fix_caps!r}")
        if self.correction not in ("empirical", "se-gp"):
            raise InputError(f"unknown correction mode {self.correction!r}")
        if self.pwl_segments < 1:
            raise InputError("pwl_segments must be >= 1")

    @property
    def validation_seed(self) -> int:
        return self.seed + 1 if self.validate_seed is None else self.validate_seed

    def schedule_config(self) -> ScheduleConfig:
        return ScheduleConfig(
            epsilon=self.epsilon, gamma_rule=self.gamma_rule, pwl_segments=self.pwl_segments,
            grid_steps=self.grid_steps, wc0=self.wc0, t_wc=self.t_wc, n_lhs=self.n_lhs,
            lhs_seed=self.lhs_seed, jitter=self.jitter, correction=self.correction,
            fix_caps=self.fix_caps, monitor=self.monitor, tol=self.tol, gap=self.gap,
            node_limit=self.node_limit,
        )


_CONFIG_FIELDS = {f.name for f in fields(RunConfig)}


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
        for key, value in raw.items():
            name = key.replace("-", "_")
            if name not in _CONFIG_FIELDS:
                raise InputError(f"{path}: unknown setting {key!r}")
            values[name] = value
    for name in _CONFIG_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return RunConfig(**values)


def _add_common(p: argparse.ArgumentParser, *, scenarios: bool = True) -> None:
    p.add_argument("--case", help="case file or bundled name (pjm5, ieee118)")
    p.add_argument("--config", help="JSON file with default settings")
    p.add_argument("--out-dir", dest="out_dir", help="output directory (default: out)")
    p.add_argument("--epsilon", type=float, help="risk level of each chance constraint")
    p.add_argument("-v", "--verbose", action="store_true")
    if scenarios:
        p.add_argument("--seed", type=int, help="training scenario seed")
        p.add_argument("--n-train", dest="n_train", type=int, help="training scenarios")
        p.add_argument("--scenarios", help="CSV of training deviations (overrides Gaussian sampling)")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ccerco", description="Chance-constrained energy/reserve/curtailment scheduling.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="summarize a case")
    p.add_argument("--case", required=True)
    p.add_argument("--ptdf", help="write the PTDF matrix to this CSV")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("train", help="fit surrogates and write bundle.json")
    _add_common(p)
    p.add_argument("--gamma-rule", dest="gamma_rule", choices=["gaussian", "cantelli"])
    p.add_argument("--pwl-segments", dest="pwl_segments", type=int)
    p.add_argument("--grid-steps", dest="grid_steps", type=int)
    p.add_argument("--wc0", type=_float_list, help="first grid cap per farm (comma separated, MW)")
    p.add_argument("--t-wc", dest="t_wc", type=_float_list, help="grid step per farm (comma separated, MW)")
    p.add_argument("--n-lhs", dest="n_lhs", type=int)
    p.add_argument("--jitter", type=float)

    p = sub.add_parser("schedule", help="solve M0 (data-driven) or M1 (fixed moments)")
    _add_common(p)
    p.add_argument("--method", required=True, choices=["m0", "m1"])
    p.add_argument("--bundle", help="surrogate bundle (default: <out-dir>/bundle.json, trained if missing)")
    p.add_argument("--gamma-rule", dest="gamma_rule", choices=["gaussian", "cantelli"])
    p.add_argument("--pwl-segments", dest="pwl_segments", type=int)
    p.add_argument("--fix-caps", dest="fix_caps", choices=["free", "max"])
    p.add_argument("--caps-from", dest="caps_from", help="M1 only: take caps from this results file")
    p.add_argument("--correction", choices=["empirical", "se-gp"])
    p.add_argument("--dump-program", dest="dump_program", help="write the M0 program in text form")
    p.add_argument("--name", help="results file stem (default: results_<method>)")

    p = sub.add_parser("validate", help="Monte-Carlo violation frequencies of a schedule")
    _add_common(p, scenarios=False)
    p.add_argument("--results", required=True)
    p.add_argument("--seed", type=int, help="training seed (validation uses seed+1 unless --validate-seed)")
    p.add_argument("--validate-seed", dest="validate_seed", type=int)
    p.add_argument("--n-validate", dest="n_validate", type=int)
    p.add_argument("--traces", help="e.g. line=6,gen=2 (writes per-scenario CSV)")

    p = sub.add_parser("report", help="side-by-side table of schedule/validation pairs")
    p.add_argument("pairs", nargs="+", metavar="RESULTS[:VALIDATION]")
    p.add_argument("--out", help="also write the table to this file")
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


# --------------------------------------------------------------------- helpers


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _write_manifest(out_dir: Path, command: str, cfg: RunConfig | None, extra: dict) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": asdict(cfg) if cfg is not None else None,
        "versions": {
            "ccerco": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    manifest.update(extra)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"manifest_{command}.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _scenarios(case: GridCase, cfg: RunConfig, *, validation: bool = False) -> ScenarioSet:
    if cfg.scenarios and not validation:
        path = Path(cfg.scenarios)
        if not path.exists():
            raise FileNotFoundError(f"scenario file not found: {path}")
        sc = read_scenarios_csv(path)
        if sc.n_wind != case.n_wind:
            raise InputError(f"{path}: {sc.n_wind} columns but the case has {case.n_wind} wind farms")
        try:
            margin_rank(sc.n, cfg.epsilon)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        return sc
    n = cfg.n_validate if validation else cfg.n_train
    seed = cfg.validation_seed if validation else cfg.seed
    return sample_gaussian(n, case.wind_mean, case.wind_std, seed)


def _print_rows(rows: list[tuple[str, float, str]], out=None) -> None:
    out = sys.stdout if out is None else out
    width = max(len(r[0]) for r in rows)
    for label, value, unit in rows:
        print(f"{label:<{width}}  {_fmt(value):>10} {unit}", file=out)


# -------------------------------------------------------------------- commands


def cmd_inspect(args) -> int:
    case = load_case(args.case)
    print(case.summary())
    print(f"slack bus: {case.slack_bus}")
    print("\nbus  demand_MW")
    for b, d in zip(case.bus_ids, case.demand):
        if d != 0 or case.n_buses <= 30:
            print(f"{b:>4} {_fmt(d):>10}")
    print("\nline from   to  x_pu     limit_MW")
    for i in range(case.n_lines):
        lim = "unlimited" if case.line_limit[i] >= 9900 else _fmt(case.line_limit[i])
        print(f"{case.line_ids[i]:>4} {case.bus_ids[case.line_from[i]]:>4} {case.bus_ids[case.line_to[i]]:>4} "
              f"{case.reactance[i]:<8.4g} {lim}")
    print("\ngen  bus  Pmin_MW  Pmax_MW  c_e    c_r")
    for g in range(case.n_gens):
        print(f"{case.gen_ids[g]:>4} {case.bus_ids[case.gen_bus[g]]:>4} {_fmt(case.p_min[g]):>8} "
              f"{_fmt(case.p_max[g]):>8} {_fmt(case.cost_energy[g]):<6} {_fmt(case.cost_reserve[g])}")
    print("\nwind bus  forecast_MW  capacity_MW  std_MW")
    for w in range(case.n_wind):
        print(f"{case.wind_ids[w]:>4} {case.bus_ids[case.wind_bus[w]]:>4} {_fmt(case.w_fc[w]):>12} "
              f"{_fmt(case.w_max[w]):>12} {_fmt(case.wind_std[w]):>7}")
    print("\nwind farm buses: " + ", ".join(str(case.bus_ids[b]) for b in case.wind_bus))
    if args.ptdf:
        ptdf = compute_ptdf(case)
        with open(args.ptdf, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["line"] + [f"bus_{b}" for b in case.bus_ids])
            for i, row in enumerate(ptdf):
                w.writerow([case.line_ids[i]] + [repr(float(v)) for v in row])
        print(f"PTDF written to {args.ptdf}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    case = load_case(cfg.case)
    sens = compute_sensitivities(case)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    sc = _scenarios(case, cfg)
    bundle = train_bundle(case, sc, cfg.schedule_config(), sens)
    elapsed = time.perf_counter() - t0
    bundle.save(out / "bundle.json")
    m = bundle.meta
    print(f"bundle: {out / 'bundle.json'}")
    print(f"  wind farms: {bundle.n_wind} (mean and sigma surrogates each)")
    print(f"  kappa entries: {bundle.n_constraints}")
    print(f"  gamma0 ({bundle.gamma_rule}): {_fmt(bundle.gamma0)}")
    print(f"  grid points per farm: {m['grid_points']}, kappa points: {m['kappa_points']}")
    print(f"  max two-stage identity residual: {m['identity_residual']:.3g}")
    for i, (mg, sg) in enumerate(zip(bundle.mu_gp, bundle.sigma_gp)):
        print(f"  farm {case.wind_ids[i]}: mean GP l={_fmt(mg.params['length'])} tau={_fmt(mg.params['tau'])}; "
              f"sigma GP l={_fmt(sg.params['length'])} tau={_fmt(sg.params['tau'])}; "
              f"PWL max error {_fmt(m['mu_pwl_max_error'][i])} / {_fmt(m['sigma_pwl_max_error'][i])} MW")
    _write_manifest(out, "train", cfg, {"seeds": {"train": sc.seed}, "timing": {"train": elapsed}})
    return EXIT_OK


def _load_or_train(case: GridCase, cfg: RunConfig, args, sens) -> tuple[SurrogateBundle, ScenarioSet | None]:
    path = Path(args.bundle) if args.bundle else Path(cfg.out_dir) / "bundle.json"
    if path.exists():
        bundle = SurrogateBundle.load(path)
        if abs(bundle.epsilon - cfg.epsilon) > 1e-12:
            raise InputError(f"{path} was trained for epsilon={bundle.epsilon}, requested {cfg.epsilon}")
        return bundle, None
    if args.bundle:
        raise FileNotFoundError(f"bundle not found: {path}")
    logger.info("no bundle at %s; training one", path)
    sc = _scenarios(case, cfg)
    bundle = train_bundle(case, sc, cfg.schedule_config(), sens)
    bundle.save(path)
    return bundle, sc


def cmd_schedule(args) -> int:
    cfg = _resolve_config(args)
    case = load_case(cfg.case)
    sens = compute_sensitivities(case)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    timing = {}
    if args.method == "m1":
        caps = None
        if args.caps_from:
            caps = DispatchSolution.load(args.caps_from).wc
        elif cfg.fix_caps == "max":
            caps = case.w_max
        sc = _scenarios(case, cfg)
        sol = solve_m1(case, sens, sc, cfg.epsilon, caps=caps, gamma_rule=cfg.gamma_rule, monitor=cfg.monitor,
                       tol=cfg.tol)
        timing["solve"] = time.perf_counter() - t0
    else:
        bundle, sc = _load_or_train(case, cfg, args, sens)
        if sc is None:
            sc = _scenarios(case, cfg)
        t1 = time.perf_counter()
        first = solve_m0(case, sens, bundle, fix_caps=cfg.fix_caps, monitor=cfg.monitor, tol=cfg.tol,
                         gap=cfg.gap, node_limit=cfg.node_limit, dump_program=args.dump_program)
        t2 = time.perf_counter()
        sol = correct(case, sens, sc, first, cfg.epsilon, cfg.correction, bundle=bundle, monitor=cfg.monitor,
                      tol=cfg.tol)
        timing.update(train=t1 - t0, misocp=t2 - t1, correct=time.perf_counter() - t2)
    timing["total"] = time.perf_counter() - t0
    stem = args.name or f"results_{args.method}"
    sol.save(out / f"{stem}.json")
    with open(out / f"{stem}_margins.csv", "w", newline="") as fh:
        rows = sol.margin_rows()
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    label = args.method.upper() + ("(wc=+inf)" if args.method == "m0" and cfg.fix_caps == "max" else "")
    print(f"{label} on {case.name}")
    _print_rows(sol.summary_rows())
    print("curtailment caps (MW): " + ", ".join(_fmt(v) for v in sol.wc))
    print(f"wall time: {timing['total']:.3g} s")
    _write_manifest(out, f"schedule_{stem}", cfg, {"seeds": {"train": sc.seed}, "timing": timing,
                                                  "results": str(out / f"{stem}.json")})
    return EXIT_OK


def _parse_traces(text: str) -> tuple[list[int], list[int]]:
    lines, gens = [], []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        key, _, val = part.partition("=")
        if key == "line":
            lines.append(int(val))
        elif key == "gen":
            gens.append(int(val))
        else:
            raise InputError(f"bad --traces entry {part!r}; use line=<id> or gen=<id>")
    return lines, gens


def cmd_validate(args) -> int:
    cfg = _resolve_config(args)
    case = load_case(cfg.case)
    sens = compute_sensitivities(case)
    path = Path(args.results)
    if not path.exists():
        raise FileNotFoundError(f"results file not found: {path}")
    sol = DispatchSolution.load(path)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    sc = _scenarios(case, cfg, validation=True)
    lines, gens = _parse_traces(args.traces) if args.traces else ([], [])
    report = monte_carlo_violation(sol, case, sens, sc, training_seed=cfg.seed, keep_traces=bool(args.traces))
    stem = path.stem + "_validation"
    report.save(out / f"{stem}.json")
    if args.traces:
        write_traces(report, case, out / f"{stem}_traces.csv", lines, gens)
    print(f"validation of {path.name}: N={report.n}, seed={report.seed}")
    print(f"Max transmission violation  {100 * report.max_transmission:.2f} %")
    print(f"Max generation violation    {100 * report.max_generation:.2f} %")
    for msg in report.warnings:
        print(f"warning: {msg}")
    _write_manifest(out, f"validate_{path.stem}", cfg,
                    {"seeds": {"train": cfg.seed, "validate": sc.seed},
                     "timing": {"validate": time.perf_counter() - t0}})
    return EXIT_OK


def cmd_report(args) -> int:
    columns = []
    for pair in args.pairs:
        res, _, val = pair.partition(":")
        rp = Path(res)
        if not rp.exists():
            raise FileNotFoundError(f"results file not found: {rp}")
        sol = DispatchSolution.load(rp)
        v = None
        if val:
            vp = Path(val)
            if not vp.exists():
                raise FileNotFoundError(f"validation file not found: {vp}")
            v = json.loads(vp.read_text())
        columns.append((rp.stem, sol, v))
    labels = [
        "Total operational cost", "Energy cost", "Reserve cost",
        "Total up reserve capacity", "Total down reserve capacity",
        "Max transmission violation", "Max generation violation",
    ]
    table = []
    for name, sol, v in columns:
        vals = [sol.total_cost, sol.energy_cost, sol.reserve_cost, sol.total_up, sol.total_dn]
        vals = [_fmt(x) for x in vals]
        if v is None:
            vals += ["-", "-"]
        else:
            vals += [f"{100 * v['max_transmission_violation']:.2f}%", f"{100 * v['max_generation_violation']:.2f}%"]
        table.append((name, vals))
    width = max(len(s) for s in labels)
    colw = max(12, *(len(n) for n, _ in table))
    lines = [" " * width + "  " + "".join(f"{n:>{colw + 2}}" for n, _ in table)]
    for k, label in enumerate(labels):
        lines.append(f"{label:<{width}}  " + "".join(f"{vals[k]:>{colw + 2}}" for _, vals in table))
    text = "\n".join(lines)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


COMMANDS = {
    "inspect": cmd_inspect,
    "train": cmd_train,
    "schedule": cmd_schedule,
    "validate": cmd_validate,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, CaseError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ModelError, GpFitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
