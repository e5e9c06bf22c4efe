"""Command line: ``hughes-sl {run,sweep,validate,scenarios}``.

Exit status is 0 on success, 1 on a runtime failure (including failed
validation checks) and 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ScenarioConfig, apply_overrides, dump_config, parse_config, validate
from .errors import ConfigurationError, HughesError
from .scenarios import BUILTINS, builtin, turnstile_rectangles

logger = logging.getLogger("hughes_sl")

# short names accepted by ``sweep --param``
PARAM_ALIASES = {
    "eps": "physics.epsilon",
    "epsilon": "physics.epsilon",
    "M0": "initial.M0",
    "m0": "initial.M0",
}


class UsageError(Exception):
    pass


def load_config(args) -> ScenarioConfig:
    if (args.scenario is None) == (args.config is None):
        raise UsageError("give exactly one of --scenario and --config")
    cfg = builtin(args.scenario) if args.scenario else parse_config(args.config)
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    return cfg


def _summary(cfg: ScenarioConfig, record: dict) -> str:
    parts = [f"{cfg.name}:"]
    t = record.get("evac_time")
    parts.append(f"evac_time={'not reached' if t is None else f'{t:.4g}'}")
    for k, v in record.items():
        if k.startswith("split."):
            parts.append(f"{k}={v:.2f}%")
    parts.append(f"max_density={record['max_density']:.4g}")
    return " ".join(parts)


def cmd_run(args) -> int:
    from .runner import run_config

    cfg = load_config(args)
    out = Path(args.out) if args.out else Path("runs") / cfg.name
    _, record = run_config(cfg, out_dir=out)
    print(_summary(cfg, record))
    print(f"outputs in {out}")
    return 0


# ---------------------------------------------------------------------------
# sweep


def _parse_value(text: str):
    t = text.strip()
    if t.lower() in ("none", "null"):
        return None
    try:
        return float(t)
    except ValueError:
        raise UsageError(f"sweep value {t!r} is not a number or 'none'") from None


def sweep_config(base: ScenarioConfig, param: str, value) -> ScenarioConfig:
    """``base`` with ``param`` set to ``value``; ``c`` rebuilds the barriers."""
    if param == "c":
        cfg = apply_overrides(base, [])
        cfg.geometry.obstacles = turnstile_rectangles(value)
        cfg.name = "turnstiles_none" if value is None else f"turnstiles_c{value:g}"
        validate(cfg)
        return cfg
    if value is None:
        raise UsageError(f"'none' is only valid for the c sweep, not {param!r}")
    path = PARAM_ALIASES.get(param, param)
    return apply_overrides(base, [f"{path}={value!r}"])


def _sweep_one(job):
    from .runner import run_config

    cfg, out = job
    _, record = run_config(cfg, out_dir=out)
    return record


def _row(param: str, value, record: dict, exit_ids) -> dict:
    row = {param: "none" if value is None else value,
           "evac_time": record["evac_time"], "evacuated": record["evacuated"]}
    for e in exit_ids:
        row[f"split.{e}"] = record.get(f"split.{e}")
    row["max_density"] = record["max_density"]
    row["remaining_mass"] = record["remaining_mass"]
    return row


def run_sweep(base: ScenarioConfig, param: str, values, out: Path, jobs: int = 1,
              echo=print) -> list[dict]:
    """One run per value; rows go to ``out/sweep.csv`` as they complete.

    A failing run stops the sweep; rows already written stay on disk.
    """
    if not values:
        raise UsageError("the sweep needs at least one value")
    configs = [sweep_config(base, param, v) for v in values]
    exit_ids = [e.id for e in base.geometry.exits] or None
    if exit_ids is None:
        exit_ids = list(configs[0].node_map().exit_ids)
    out.mkdir(parents=True, exist_ok=True)
    fields = [param, "evac_time", "evacuated"] + [f"split.{e}" for e in exit_ids]
    fields += ["max_density", "remaining_mass"]
    jobs_list = [(cfg, out / f"run_{k:02d}") for k, cfg in enumerate(configs)]
    rows = []
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        fh.flush()
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                records = pool.map(_sweep_one, jobs_list)
                for v, rec in zip(values, records):
                    rows.append(_row(param, v, rec, exit_ids))
                    writer.writerow(rows[-1])
                    fh.flush()
                    echo(_format_row(rows[-1]))
        else:
            for v, job in zip(values, jobs_list):
                rows.append(_row(param, v, _sweep_one(job), exit_ids))
                writer.writerow(rows[-1])
                fh.flush()
                echo(_format_row(rows[-1]))
    return rows


def _format_row(row: dict) -> str:
    cells = []
    for k, v in row.items():
        cells.append(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}")
    return "  ".join(cells)


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    values = [_parse_value(t) for chunk in args.values for t in chunk.split(",") if t.strip()]
    out = Path(args.out) if args.out else Path("runs") / f"sweep_{cfg.name}_{args.param}"
    run_sweep(cfg, args.param, values, out, jobs=args.jobs)
    print(f"table in {out / 'sweep.csv'}")
    return 0


# ---------------------------------------------------------------------------
# validate / scenarios


def cmd_validate(args) -> int:
    from .validation import run_suite

    checks = run_suite(args.level)
    for c in checks:
        print(c.line())
    failed = [c.name for c in checks if not c.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return 1
    print(f"all {len(checks)} checks passed")
    return 0


def cmd_scenarios(args) -> int:
    if args.show:
        sys.stdout.write(dump_config(builtin(args.show)))
        return 0
    for name in BUILTINS:
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hughes-sl",
                                description="Semi-Lagrangian Hughes crowd model")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def source(sp):
        sp.add_argument("--scenario", help="built-in scenario name")
        sp.add_argument("--config", help="YAML scenario file")
        sp.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                        help="override a config field (repeatable)")
        sp.add_argument("--out", help="output directory")

    r = sub.add_parser("run", help="run one scenario")
    source(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a scenario for several parameter values")
    source(s)
    s.add_argument("--param", required=True,
                   help="eps, M0, c (turnstile spacing) or a dotted config path")
    s.add_argument("--values", required=True, nargs="+",
                   help="values, comma or space separated; 'none' for no barriers")
    s.add_argument("--jobs", type=int, default=1, help="parallel runs")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="run the validation checks")
    v.add_argument("--level", choices=("fast", "full"), default="fast")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("scenarios", help="list built-in scenarios")
    c.add_argument("--show", metavar="NAME", help="print the YAML of one scenario")
    c.set_defaults(func=cmd_scenarios)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hughes-sl: error: {exc}", file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        print(f"hughes-sl: configuration error: {exc}", file=sys.stderr)
        return 2
    except HughesError as exc:
        print(f"hughes-sl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"hughes-sl: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
