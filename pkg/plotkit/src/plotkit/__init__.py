"""Figures from benchmark CSV output: error-band plots and metric bar charts.

Consumes only the public CSV schemas (trace files with an abs_err column,
metrics files with mean/SD columns); nothing is recomputed from raw states,
so every figure is a pure view of the files it was given.
"""

from __future__ import annotations

import csv
import glob as _glob
from dataclasses import dataclass, field

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

TRACE_COLUMNS = ["step", "filter", "state", "truth", "estimate", "abs_err", "measurement"]
METRICS_COLUMNS = ["filter", "state", "case", "mean_abs_err", "sd_abs_err", "runs", "wall_ms"]


class PlotDataError(ValueError):
    """Missing, inconsistent, or malformed input files."""


@dataclass
class PlotSpec:
    trace_glob: str
    out_path: str
    states: list = field(default_factory=list)   # empty: all states found
    filters: list = field(default_factory=list)  # empty: all filters found
    band_alpha: float = 0.25
    xlabel: str = "time step"
    ylabel: str = "absolute error"


def read_trace(path: str) -> dict:
    """Per-(filter, state) absolute-error series from one trace file."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_COLUMNS:
            raise PlotDataError(
                f"{path}: unexpected trace columns {reader.fieldnames}, "
                f"expected {TRACE_COLUMNS}"
            )
        series: dict = {}
        for row in reader:
            key = (row["filter"], row["state"])
            series.setdefault(key, []).append((int(row["step"]), float(row["abs_err"])))
    out = {}
    for key, pairs in series.items():
        pairs.sort()
        out[key] = np.array([v for _, v in pairs])
    return out


def collect_bands(paths: list, states: list, filters: list):
    """Mean and SD of abs_err across runs at each step.

    Returns (steps, states, filters, bands) with bands[(filter, state)] =
    (mean over runs, SD over runs), both arrays over time steps.  A single run
    yields zero-width bands.
    """
    if not paths:
        raise PlotDataError("no trace files matched")
    runs = []
    for p in sorted(paths):
        runs.append((p, read_trace(p)))
    found_states = sorted({s for _, r in runs for (_, s) in r})
    found_filters = sorted({f for _, r in runs for (f, _) in r})
    states = states or found_states
    filters = filters or found_filters
    horizons = {}
    for p, r in runs:
        lengths = {len(v) for v in r.values()}
        if len(lengths) != 1:
            raise PlotDataError(f"{p}: inconsistent series lengths {sorted(lengths)}")
        horizons.setdefault(lengths.pop(), []).append(p)
    if len(horizons) != 1:
        detail = "; ".join(f"{h} steps: {files}" for h, files in sorted(horizons.items()))
        raise PlotDataError(f"trace files disagree on horizon ({detail})")
    bands = {}
    for f in filters:
        for s in states:
            missing = [p for p, r in runs if (f, s) not in r]
            if missing:
                raise PlotDataError(f"series ({f}, {s}) missing from {missing}")
            stack = np.stack([r[(f, s)] for _, r in runs])
            bands[(f, s)] = (stack.mean(axis=0), stack.std(axis=0))
    steps = np.arange(next(iter(bands.values()))[0].size)
    return steps, states, filters, bands


def plot_error_bands(spec: PlotSpec) -> str:
    """One panel per state: per-filter mean error curve with a +-1 SD band."""
    paths = _glob.glob(spec.trace_glob)
    steps, states, filters, bands = collect_bands(paths, spec.states, spec.filters)
    fig, axes = plt.subplots(
        len(states), 1, figsize=(7, 2.8 * len(states)), sharex=True, squeeze=False
    )
    for ax, state in zip(axes[:, 0], states):
        for f in filters:
            mean, sd = bands[(f, state)]
            (line,) = ax.plot(steps, mean, label=f)
            ax.fill_between(
                steps, mean - sd, mean + sd, alpha=spec.band_alpha, color=line.get_color()
            )
        ax.set_ylabel(f"{spec.ylabel} ({state})")
        ax.legend()
    axes[-1, 0].set_xlabel(spec.xlabel)
    fig.tight_layout()
    fig.savefig(spec.out_path)
    plt.close(fig)
    return spec.out_path


def read_metrics(path: str) -> list:
    """Rows of a metrics file as dicts with numeric mean/SD fields."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_COLUMNS:
            raise PlotDataError(
                f"{path}: unexpected metrics columns {reader.fieldnames}, "
                f"expected {METRICS_COLUMNS}"
            )
        rows = []
        for row in reader:
            rows.append(
                {
                    "filter": row["filter"],
                    "state": row["state"],
                    "case": row["case"],
                    "mean_abs_err": float(row["mean_abs_err"]),
                    "sd_abs_err": float(row["sd_abs_err"]),
                }
            )
    if not rows:
        raise PlotDataError(f"{path}: metrics file has no rows")
    return rows


def plot_metrics_bars(metrics_path: str, out_path: str) -> str:
    """Grouped bars of mean absolute error per state, SD as whiskers."""
    rows = read_metrics(metrics_path)
    states = sorted({r["state"] for r in rows})
    filters = sorted({r["filter"] for r in rows})
    by_key = {(r["filter"], r["state"]): r for r in rows}
    width = 0.8 / len(filters)
    fig, ax = plt.subplots(figsize=(1.5 + 1.6 * len(states), 4))
    x = np.arange(len(states))
    for i, f in enumerate(filters):
        means = [by_key[(f, s)]["mean_abs_err"] for s in states]
        sds = [by_key[(f, s)]["sd_abs_err"] for s in states]
        ax.bar(x + (i - (len(filters) - 1) / 2) * width, means, width, yerr=sds,
               capsize=4, label=f)
    ax.set_xticks(x)
    ax.set_xticklabels(states)
    ax.set_ylabel("mean absolute error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
