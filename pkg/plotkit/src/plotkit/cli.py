"""Command-line entry points for band and bar figures."""

from __future__ import annotations

import argparse
import sys

from . import PlotDataError, PlotSpec, plot_error_bands, plot_metrics_bars


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plotkit", description="Render figures from benchmark CSV files"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    bands = sub.add_parser("bands", help="mean +- SD error bands over time")
    bands.add_argument("--traces", required=True, help="glob of trace_*.csv files")
    bands.add_argument("--out", required=True, help="output image path (.png/.svg)")
    bands.add_argument("--states", default="", help="comma-separated subset, e.g. x1,x2")
    bands.add_argument("--filters", default="", help="comma-separated subset")
    bands.add_argument("--alpha", type=float, default=0.25, help="band opacity")

    bars = sub.add_parser("bars", help="grouped mean-error bars with SD whiskers")
    bars.add_argument("--metrics", required=True, help="metrics.csv path")
    bars.add_argument("--out", required=True, help="output image path (.png/.svg)")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "bands":
            spec = PlotSpec(
                trace_glob=args.traces,
                out_path=args.out,
                states=[s for s in args.states.split(",") if s],
                filters=[f for f in args.filters.split(",") if f],
                band_alpha=args.alpha,
            )
            path = plot_error_bands(spec)
        else:
            path = plot_metrics_bars(args.metrics, args.out)
    except PlotDataError as exc:
        print(f"plotkit: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
