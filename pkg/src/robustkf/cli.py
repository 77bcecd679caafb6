"""Command-line front end: validate configs, run benchmarks, compare metrics."""

from __future__ import annotations

import argparse
import sys as _sys
from importlib import resources
from pathlib import Path

from .configio import build_experiment, describe, parse_config
from .errors import ConfigError, NumericalError
from .harness import (
    MetricsTable,
    metrics_from_csv,
    metrics_to_csv,
    metrics_to_json,
    run_ensemble,
    trace_filename,
    trace_to_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_REGRESSION = 3

WATCHED_COLUMNS = ("mean_abs_err", "sd_abs_err")


def resolve_config_text(name: str) -> str:
    """Read a config from a path, or from the packaged benchmarks by bare name."""
    path = Path(name)
    if path.exists():
        return path.read_text()
    stem = name if name.endswith(".ini") else name + ".ini"
    packaged = resources.files("robustkf").joinpath("benchmarks", stem)
    if packaged.is_file():
        return packaged.read_text()
    raise ConfigError(f"config not found: {name!r} (no such file or packaged benchmark)")


def cmd_validate(args) -> int:
    bench = parse_config(resolve_config_text(args.config))
    for line in describe(bench):
        print(line)
    return EXIT_OK


def _print_metrics(table: MetricsTable, title: str):
    print(title)
    print(f"{'Filter':<12} {'State':<6} {'Mean':>12} {'SD':>12} {'Runs':>6}")
    for r in table.rows:
        print(
            f"{r.filter:<12} {r.state:<6} {r.mean_abs_err:>12.4f} "
            f"{r.sd_abs_err:>12.4f} {r.runs:>6}"
        )
    if table.failures:
        print(f"failures: {len(table.failures)} (see metrics.json)")


def cmd_run(args) -> int:
    bench = parse_config(resolve_config_text(args.config))
    cfg = build_experiment(
        bench,
        case=args.case,
        num_seeds=args.seeds,
        horizon=args.horizon,
        basis_order=args.order,
    )
    table, traces = run_ensemble(cfg, bench.system)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_to_csv(table))
    (out / "metrics.json").write_text(metrics_to_json(table, cfg))
    for trace in traces:
        (out / trace_filename(trace)).write_text(trace_to_csv(trace))
    _print_metrics(
        table,
        f"Case {cfg.case} ({bench.system.time_mode.upper()}), "
        f"horizon {cfg.horizon}, window start {cfg.window_start}",
    )
    if args.verbose:
        print(f"wrote {2 + len(traces)} files to {out}")
    return EXIT_OK


def _load_metrics(path: str) -> MetricsTable:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"metrics file not found: {path}")
    return metrics_from_csv(p.read_text())


def cmd_compare(args) -> int:
    left = _load_metrics(args.left)
    right = _load_metrics(args.right)
    lkeys = {(r.filter, r.state, r.case) for r in left.rows}
    rkeys = {(r.filter, r.state, r.case) for r in right.rows}
    key = lambda r: (r.filter, r.state, r.case)  # noqa: E731
    if lkeys != rkeys:
        lf = {r.filter for r in left.rows}
        rf = {r.filter for r in right.rows}
        align = {(r.state, r.case) for r in left.rows} == {(r.state, r.case) for r in right.rows}
        if len(lf) == 1 and len(rf) == 1 and align:
            key = lambda r: (r.state, r.case)  # noqa: E731
        else:
            raise ConfigError(
                f"metrics schema mismatch: rows {sorted(lkeys)} vs {sorted(rkeys)}"
            )
    rmap = {key(r): r for r in right.rows}
    regressed = False
    print(f"{'Row':<24} {'Column':<14} {'Left':>12} {'Right':>12} {'Delta':>12} {'Ratio':>8}")
    for lrow in left.rows:
        rrow = rmap[key(lrow)]
        for col in WATCHED_COLUMNS:
            a, b = getattr(lrow, col), getattr(rrow, col)
            ratio = a / b if b != 0 else float("inf") if a else 1.0
            print(
                f"{'/'.join(key(lrow)):<24} {col:<14} {a:>12.4f} {b:>12.4f} "
                f"{a - b:>12.4f} {ratio:>8.3f}"
            )
            if a > b * (1.0 + args.tolerance):
                regressed = True
    if regressed:
        print(f"regression: left exceeds right by more than {args.tolerance:.1%}")
        return EXIT_REGRESSION
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustkf",
        description="Robust Kalman filter benchmarks for systems with random parameters",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="parse a config and report its contents")
    p_val.add_argument("config")
    p_val.set_defaults(func=cmd_validate)

    p_run = sub.add_parser("run", help="run a benchmark and write metrics + traces")
    p_run.add_argument("config")
    p_run.add_argument("--case", choices=["I", "II"], default=None)
    p_run.add_argument("--out", default="results")
    p_run.add_argument("--seeds", type=int, default=None, help="override seed count")
    p_run.add_argument("--horizon", type=int, default=None)
    p_run.add_argument("--order", type=int, default=None, help="override chaos order")
    p_run.add_argument("-v", "--verbose", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="diff two metrics.csv files")
    p_cmp.add_argument("left")
    p_cmp.add_argument("right")
    p_cmp.add_argument("--tolerance", type=float, default=0.0,
                       help="allowed relative increase before flagging a regression")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=_sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
