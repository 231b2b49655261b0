"""Command line: ``netstab run|compare|sweep --config PATH --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
Every written path is printed on its own line.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .errors import ConfigurationError, NumericalError
from .io import (
    SCHEMA,
    config_from_dict,
    config_to_dict,
    format_value,
    parse_value,
    read_config,
    write_config,
    write_trace_csv,
)
from .metrics import NUMERIC_FIELDS, summarize
from .sim import ESTIMATORS, run_monte_carlo, run_scenario

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _write_json(data, path: Path) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _load(args):
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return read_config(args.config, overrides)


def _simulate(config, out: Path) -> tuple[list, dict, list[Path]]:
    trace = run_scenario(config)
    metrics = summarize(trace, noise_enabled=config.noise_enabled).to_dict()
    out.mkdir(parents=True, exist_ok=True)
    paths = [
        write_trace_csv(trace, out / "trace.csv"),
        _write_json(metrics, out / "metrics.json"),
        write_config(config, out / "config.toml"),
    ]
    return trace, metrics, paths


def cmd_run(args) -> list[Path]:
    config = _load(args)
    _, _, paths = _simulate(config, Path(args.out))
    return paths


def cmd_compare(args) -> list[Path]:
    """All three estimator regimes on one config and seed."""
    base = _load(args)
    out = Path(args.out)
    paths = []
    traces, table = {}, {}
    for kind in ESTIMATORS:
        trace, metrics, written = _simulate(base.with_overrides(estimator=kind), out / kind)
        traces[kind], table[kind] = trace, metrics
        paths += written

    columns = ["estimator", "converged", *NUMERIC_FIELDS]
    with (out / "comparison.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for kind, metrics in table.items():
            writer.writerow([kind] + [metrics[c] if metrics[c] is not None else "" for c in columns[1:]])
    paths.append(out / "comparison.csv")

    # Per-axis estimate-minus-truth side by side, for the estimator comparison plot.
    with (out / "errors.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        axes = ("err_x", "err_y", "err_theta")
        writer.writerow(["step", "time"] + [f"{a}_{k}" for a in axes for k in ESTIMATORS])
        for rows in zip(*(traces[k] for k in ESTIMATORS)):
            writer.writerow([rows[0].step, repr(rows[0].time)]
                            + [repr(float(getattr(r, a))) for a in axes for r in rows])
    paths.append(out / "errors.csv")
    paths.append(write_config(base, out / "config.toml"))

    print(_format_table(table))
    return paths


def _format_table(table) -> str:
    names = ["converged", "final_rho", "final_abs_theta", "rmse_x", "rmse_y", "rmse_theta"]
    lines = ["estimator  " + "".join(f"{n:>17}" for n in names)]
    for kind, metrics in table.items():
        cells = []
        for n in names:
            value = metrics[n]
            cells.append(f"{str(value):>17}" if isinstance(value, bool) else f"{value:>17.6g}")
        lines.append(f"{kind:<11}" + "".join(cells))
    return "\n".join(lines)


def cmd_sweep(args) -> list[Path]:
    """Monte Carlo over ``seeds`` for each value of one config key."""
    if args.key not in SCHEMA:
        raise ConfigurationError(f"unknown key {args.key!r}")
    base = _load(args)
    seeds = args.seeds if args.seeds else [base.seed]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_config(base, out / "config.toml")]
    summary = []
    with (out / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["value", "seed", "converged", *NUMERIC_FIELDS])
        for i, raw in enumerate(args.values):
            values = config_to_dict(base)
            values[args.key] = parse_value(raw)
            config = config_from_dict(values)
            paths.append(write_config(config, out / f"config_{i}.toml"))
            mc = run_monte_carlo(config, seeds, jobs=args.jobs)
            label = format_value(config_to_dict(config)[args.key])
            for seed, metrics in mc.per_seed.items():
                row = metrics.to_dict()
                writer.writerow([label, seed, row["converged"]]
                                + ["" if row[n] is None else row[n] for n in NUMERIC_FIELDS])
            summary.append({
                "value": label, "config": f"config_{i}.toml", "seeds": len(seeds),
                "converged": mc.converged_count, "median": mc.median, "q10": mc.q10, "q90": mc.q90,
            })
    paths.append(out / "sweep.csv")
    paths.append(_write_json({"key": args.key, "results": summary}, out / "summary.json"))
    return paths


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netstab",
        description="Simulate a networked differential-drive robot under constant delays.",
        epilog=__doc__.split("\n\n", 1)[1].strip(),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="config file, or one of fig4 fig5 fig6 fig7")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, default=None)

    common(sub.add_parser("run", help="simulate one scenario"))
    common(sub.add_parser("compare", help="run the none, ekf_naive and popf regimes side by side"))
    sweep = sub.add_parser("sweep", help="sweep one config key over values and seeds")
    common(sweep)
    sweep.add_argument("--key", required=True)
    sweep.add_argument("--values", nargs="+", required=True, help="TOML literals, e.g. 10 20 or '[0,0,0]'")
    sweep.add_argument("--seeds", nargs="+", type=int, default=None)
    sweep.add_argument("--jobs", type=int, default=1)
    return parser


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        paths = COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"netstab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError, ValueError) as exc:
        print(f"netstab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"netstab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
