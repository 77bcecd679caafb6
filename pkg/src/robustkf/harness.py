"""Ground-truth simulation, filter ensembles, and error metrics.

Truth trajectories use exact discretization (matrix-exponential transition plus
Van Loan process-noise covariance) in continuous time, so truth generation and
the filters' RK4 path cannot share an error mode.  All randomness comes from
counter-based Philox streams keyed by (seed, stream), with Gaussians produced
by Box-Muller, so results are reproducible regardless of scheduling.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .basis import Gaussian, Uniform, build_basis, build_quadrature, build_quadratic_basis
from .cdfilter import (
    GalerkinOperators,
    PceState,
    build_galerkin,
    default_cd_rule,
    default_substeps,
    integrate_pce,
    mean_lyapunov_rk4,
    reconstruct_prior,
)
from .dtfilter import (
    GaussianBelief,
    build_dt_tables,
    default_dt_rule,
    dt_propagate,
    kalman_update,
    nominal_dt_propagate,
    symmetrize,
)
from .errors import ConfigError, NumericalError
from .system import UncertainLinearSystem, mean_delta

KNOWN_FILTERS = ("robust", "nominal")


class CounterRng:
    """Philox counter-based stream with Box-Muller Gaussian draws."""

    def __init__(self, seed: int, stream: int = 0):
        key = np.array([seed % 2**64, stream % 2**64], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniforms(self, count: int) -> np.ndarray:
        return self._gen.random(count)

    def normals(self, count: int) -> np.ndarray:
        pairs = (count + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1], keeps the log finite
        u2 = self._gen.random(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
        return z[:count]


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Square root factor of a PSD matrix via eigendecomposition (handles rank loss)."""
    evals, vecs = np.linalg.eigh(symmetrize(mat))
    return vecs * np.sqrt(np.clip(evals, 0.0, None))


def van_loan_discretize(a: np.ndarray, bqb: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact LTI discretization: transition e^{A dt} and integrated noise covariance.

    Uses the augmented matrix exponential of [[A, BQB^T], [0, -A^T]]; the top
    blocks give the transition matrix and Qd = F12 @ F11^T.
    """
    n = a.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = a
    aug[:n, n:] = bqb
    aug[n:, n:] = -a.T
    top = expm(aug * dt)[:n, :]
    phi = top[:, :n]
    qd = symmetrize(top[:, n:] @ phi.T)
    if not np.all(np.isfinite(phi)):
        raise NumericalError("matrix exponential produced non-finite transition matrix")
    return phi, qd


def _draw_delta(dist, rng: CounterRng) -> np.ndarray:
    out = np.empty(dist.dims)
    for j, m in enumerate(dist.marginals):
        if isinstance(m, Uniform):
            out[j] = m.lower + (m.upper - m.lower) * rng.uniforms(1)[0]
        elif isinstance(m, Gaussian):
            out[j] = m.mean + m.stddev * rng.normals(1)[0]
        else:
            raise ConfigError(f"cannot sample from {type(m).__name__}")
    return out


def simulate_truth_dt(
    sys: UncertainLinearSystem,
    delta,
    seed: int,
    steps: int,
    x0: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the discrete model; delta is a fixed vector or None for iid-per-step.

    Returns states of shape (steps+1, n) and measurements of shape (steps, p);
    measurement k corresponds to state k+1.
    """
    rng_w = CounterRng(seed, 0)
    rng_n = CounterRng(seed, 1)
    rng_d = CounterRng(seed, 2)
    lq = psd_sqrt(sys.Q)
    lr = psd_sqrt(sys.R)
    states = np.empty((steps + 1, sys.n))
    meas = np.empty((steps, sys.p))
    states[0] = np.asarray(x0, dtype=float)
    fixed = None if delta is None else np.atleast_1d(np.asarray(delta, dtype=float))
    for k in range(steps):
        d = fixed if fixed is not None else _draw_delta(sys.delta_dist, rng_d)
        w = lq @ rng_w.normals(sys.m)
        states[k + 1] = sys.A(d) @ states[k] + sys.B(d) @ w
        meas[k] = sys.C @ states[k + 1] + lr @ rng_n.normals(sys.p)
    return states, meas


def simulate_truth_ct(
    sys: UncertainLinearSystem,
    delta,
    seed: int,
    intervals: int,
    x0: np.ndarray,
    dt: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the hybrid model sampled at measurement instants.

    The parameter is held fixed within each interval (a fixed vector for the
    whole run, or None to redraw it per interval); state propagation within an
    interval is the exact discretization at that parameter value.
    """
    if dt is None:
        dt = sys.sample_period
    rng_w = CounterRng(seed, 0)
    rng_n = CounterRng(seed, 1)
    rng_d = CounterRng(seed, 2)
    lr = psd_sqrt(sys.R)
    states = np.empty((intervals + 1, sys.n))
    meas = np.empty((intervals, sys.p))
    states[0] = np.asarray(x0, dtype=float)
    fixed = None if delta is None else np.atleast_1d(np.asarray(delta, dtype=float))
    cache = None
    for k in range(intervals):
        d = fixed if fixed is not None else _draw_delta(sys.delta_dist, rng_d)
        if fixed is not None and cache is not None:
            phi, lqd = cache
        else:
            a = sys.A(d)
            b = sys.B(d)
            phi, qd = van_loan_discretize(a, b @ sys.Q @ b.T, dt)
            lqd = psd_sqrt(qd)
            if fixed is not None:
                cache = (phi, lqd)
        states[k + 1] = phi @ states[k] + lqd @ rng_w.normals(sys.n)
        meas[k] = sys.C @ states[k + 1] + lr @ rng_n.normals(sys.p)
    return states, meas


# ---------------------------------------------------------------------------
# Experiment configuration and results
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    case: str
    truth_x0: np.ndarray
    init_mean: np.ndarray
    init_cov: np.ndarray
    horizon: int
    delta_mode: str = "fixed"  # "fixed": one delta per run; "iid": redrawn per step
    delta_grid: np.ndarray | None = None
    num_seeds: int = 50
    seed_base: int = 1234
    filters: tuple = KNOWN_FILTERS
    window_start: int = 0
    basis_order: int = 4
    substeps: int | None = None
    points_per_dim: int | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.case not in ("I", "II"):
            raise ConfigError(f"case must be 'I' or 'II', got {self.case!r}")
        if self.delta_mode not in ("fixed", "iid"):
            raise ConfigError(f"delta_mode must be 'fixed' or 'iid', got {self.delta_mode!r}")
        if self.delta_mode == "fixed":
            if self.delta_grid is None or len(self.delta_grid) == 0:
                raise ConfigError("fixed delta mode requires a nonempty delta grid")
            self.delta_grid = np.atleast_2d(np.asarray(self.delta_grid, dtype=float))
        for f in self.filters:
            if f not in KNOWN_FILTERS:
                raise ConfigError(f"unknown filter {f!r}; choose from {KNOWN_FILTERS}")
        if not 0 <= self.window_start <= self.horizon:
            raise ConfigError(
                f"window_start {self.window_start} outside [0, horizon={self.horizon}]"
            )


@dataclass
class RunTrace:
    delta_label: str
    seed: int
    truth: np.ndarray            # (K+1, n)
    measurements: np.ndarray     # (K, p)
    estimates: dict              # filter -> (K+1, n)
    abs_err: dict                # filter -> (K+1, n)


@dataclass
class MetricsRow:
    filter: str
    state: str
    case: str
    mean_abs_err: float
    sd_abs_err: float
    runs: int
    wall_ms: float


@dataclass
class MetricsTable:
    rows: list
    failures: list = field(default_factory=list)

    def row(self, filt: str, state: str) -> MetricsRow:
        for r in self.rows:
            if r.filter == filt and r.state == state:
                return r
        raise KeyError(f"no metrics row for ({filt}, {state})")


def uniform_grid(dist, points: int) -> np.ndarray:
    """Uniformly spaced parameter grid (tensor product across dimensions)."""
    axes = []
    for m in dist.marginals:
        if isinstance(m, Uniform):
            axes.append(np.linspace(m.lower, m.upper, points))
        else:
            # cover +-2 standard deviations for unbounded marginals
            axes.append(np.linspace(m.mean - 2 * m.stddev, m.mean + 2 * m.stddev, points))
    grids = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in grids])


# ---------------------------------------------------------------------------
# Filter steppers
# ---------------------------------------------------------------------------

def _sym_basis_pairs(n: int) -> list:
    return [(i, j) for i in range(n) for j in range(i, n)]


class _CtAffineFlow:
    """Interval propagation map precomputed from the RK4 flow by superposition.

    The chaos ODEs are linear in the mean coefficients and affine in the
    covariance coefficients, so the map from a lifted posterior to the
    end-of-interval coefficients is affine; probing it once with unit initial
    conditions makes ensemble runs cheap while reproducing the integrator's
    flow exactly (up to roundoff in the linear combination).
    """

    def __init__(self, ops: GalerkinOperators, dt: float, substeps: int):
        self.ops = ops
        n = ops.n
        zero_sigma = np.zeros((ops.num_theta, n, n))
        self.mu_map = np.zeros((ops.num_phi * n, n))
        for i in range(n):
            mu0 = np.zeros(ops.num_phi * n)
            mu0[i] = 1.0
            out = integrate_pce(ops, PceState(mu0, zero_sigma), dt, substeps)
            self.mu_map[:, i] = out.mu
        base = integrate_pce(ops, PceState(np.zeros(ops.num_phi * n), zero_sigma), dt, substeps)
        self.sigma_const = base.sigma
        self.pairs = _sym_basis_pairs(n)
        cols = []
        for i, j in self.pairs:
            s0 = np.zeros((ops.num_theta, n, n))
            s0[0, i, j] = 1.0
            s0[0, j, i] = 1.0 if i != j else s0[0, i, j]
            out = integrate_pce(ops, PceState(np.zeros(ops.num_phi * n), s0), dt, substeps)
            cols.append(out.sigma - self.sigma_const)
        self.sigma_cols = np.stack(cols)  # (npairs, M+1, n, n)

    def propagate(self, belief: GaussianBelief) -> GaussianBelief:
        coords = np.array([belief.cov[i, j] for i, j in self.pairs])
        sigma = self.sigma_const + np.tensordot(coords, self.sigma_cols, axes=1)
        return reconstruct_prior(self.ops, PceState(self.mu_map @ belief.mean, sigma))


class _NominalCtFlow:
    """Same superposition trick on the frozen plant's mean/Lyapunov RK4 flow."""

    def __init__(self, a0: np.ndarray, bqb0: np.ndarray, dt: float, substeps: int):
        n = a0.shape[0]
        zero = np.zeros((n, n))
        args = (dt, substeps)
        self.mean_map = np.column_stack(
            [mean_lyapunov_rk4(a0, bqb0, np.eye(n)[i], zero, *args)[0] for i in range(n)]
        )
        self.cov_const = mean_lyapunov_rk4(a0, bqb0, np.zeros(n), zero, *args)[1]
        self.pairs = _sym_basis_pairs(n)
        cols = []
        for i, j in self.pairs:
            s0 = np.zeros((n, n))
            s0[i, j] = 1.0
            s0[j, i] = 1.0
            cov = mean_lyapunov_rk4(a0, bqb0, np.zeros(n), s0, *args)[1]
            cols.append(cov - self.cov_const)
        self.cov_cols = np.stack(cols)

    def propagate(self, belief: GaussianBelief) -> GaussianBelief:
        coords = np.array([belief.cov[i, j] for i, j in self.pairs])
        cov = self.cov_const + np.tensordot(coords, self.cov_cols, axes=1)
        return GaussianBelief(self.mean_map @ belief.mean, symmetrize(cov))


def make_steppers(cfg: ExperimentConfig, sys: UncertainLinearSystem) -> dict:
    """Per-filter functions mapping (posterior, measurement) to the next posterior."""
    steppers = {}
    if sys.time_mode == "dt":
        if "robust" in cfg.filters:
            rule = None
            if cfg.points_per_dim is not None:
                rule = build_quadrature(sys.delta_dist, cfg.points_per_dim)
            tables = build_dt_tables(sys, rule or default_dt_rule(sys))

            def robust_dt(belief, y, _t=tables):
                return kalman_update(dt_propagate(_t, belief), y, sys.C, sys.R)

            steppers["robust"] = robust_dt
        if "nominal" in cfg.filters:
            d0 = mean_delta(sys)
            a0 = sys.A(d0)
            b0 = sys.B(d0)
            bqb0 = b0 @ sys.Q @ b0.T

            def nominal_dt(belief, y, _a=a0, _q=bqb0):
                return kalman_update(nominal_dt_propagate(_a, _q, belief), y, sys.C, sys.R)

            steppers["nominal"] = nominal_dt
    else:
        dt = sys.sample_period
        substeps = cfg.substeps or default_substeps(dt)
        if "robust" in cfg.filters:
            basis = build_basis(sys.delta_dist, cfg.basis_order)
            qbasis = build_quadratic_basis(basis)
            rule = default_cd_rule(sys, basis)
            if cfg.points_per_dim is not None:
                rule = build_quadrature(sys.delta_dist, cfg.points_per_dim)
            ops = build_galerkin(sys, basis, qbasis, rule)
            flow = _CtAffineFlow(ops, dt, substeps)

            def robust_ct(belief, y, _f=flow):
                return kalman_update(_f.propagate(belief), y, sys.C, sys.R)

            steppers["robust"] = robust_ct
        if "nominal" in cfg.filters:
            d0 = mean_delta(sys)
            a0 = sys.A(d0)
            b0 = sys.B(d0)
            flow = _NominalCtFlow(a0, b0 @ sys.Q @ b0.T, dt, substeps)

            def nominal_ct(belief, y, _f=flow):
                return kalman_update(_f.propagate(belief), y, sys.C, sys.R)

            steppers["nominal"] = nominal_ct
    return steppers


# ---------------------------------------------------------------------------
# Ensemble runner
# ---------------------------------------------------------------------------

def _delta_label(delta) -> str:
    if delta is None:
        return "iid"
    return "_".join(f"{v:.6g}" for v in np.atleast_1d(delta))


def run_ensemble(
    cfg: ExperimentConfig, sys: UncertainLinearSystem
) -> tuple[MetricsTable, list]:
    """Run every (delta, seed) pair through the requested filters.

    Aggregates the absolute estimation error per filter and state over the
    configured window, pooled across time steps, grid points, and seeds.
    Runs that produce non-finite estimates are recorded as failures and
    excluded from the pooled statistics.
    """
    steppers = make_steppers(cfg, sys)
    if cfg.delta_mode == "fixed":
        run_deltas = [cfg.delta_grid[i] for i in range(cfg.delta_grid.shape[0])]
    else:
        run_deltas = [None]
    seeds = [cfg.seed_base + i for i in range(cfg.num_seeds)]

    pooled = {f: [] for f in cfg.filters}
    wall = {f: 0.0 for f in cfg.filters}
    run_counts = {f: 0 for f in cfg.filters}
    failures = []
    traces = []
    init = GaussianBelief(cfg.init_mean, cfg.init_cov)
    window = slice(cfg.window_start, None)

    for delta in run_deltas:
        label = _delta_label(delta)
        for seed in seeds:
            if sys.time_mode == "dt":
                truth, meas = simulate_truth_dt(sys, delta, seed, cfg.horizon, cfg.truth_x0)
            else:
                truth, meas = simulate_truth_ct(sys, delta, seed, cfg.horizon, cfg.truth_x0)
            estimates, errors = {}, {}
            for name in cfg.filters:
                step = steppers[name]
                est = np.empty((cfg.horizon + 1, sys.n))
                est[0] = init.mean
                belief = init
                start = time.perf_counter()
                try:
                    for k in range(cfg.horizon):
                        belief = step(belief, meas[k])
                        est[k + 1] = belief.mean
                    if not np.all(np.isfinite(est)):
                        raise NumericalError("non-finite estimate")
                except NumericalError as exc:
                    wall[name] += 1e3 * (time.perf_counter() - start)
                    failures.append(
                        {"filter": name, "delta": label, "seed": seed, "reason": str(exc)}
                    )
                    continue
                wall[name] += 1e3 * (time.perf_counter() - start)
                err = np.abs(truth - est)
                estimates[name] = est
                errors[name] = err
                pooled[name].append(err[window])
                run_counts[name] += 1
            traces.append(RunTrace(label, seed, truth, meas, estimates, errors))

    rows = []
    for name in cfg.filters:
        if pooled[name]:
            stacked = np.concatenate(pooled[name], axis=0)
            means = stacked.mean(axis=0)
            sds = stacked.std(axis=0)
        else:
            means = np.full(sys.n, np.nan)
            sds = np.full(sys.n, np.nan)
        for s in range(sys.n):
            rows.append(
                MetricsRow(
                    filter=name,
                    state=f"x{s + 1}",
                    case=cfg.case,
                    mean_abs_err=float(means[s]),
                    sd_abs_err=float(sds[s]),
                    runs=run_counts[name],
                    wall_ms=wall[name],
                )
            )
    return MetricsTable(rows, failures), traces


def recompute_metrics_from_traces(
    traces: list, filters, n_states: int, window_start: int
) -> dict:
    """Independent re-aggregation used to cross-check run_ensemble's pooling."""
    out = {}
    for name in filters:
        chunks = [t.abs_err[name][window_start:] for t in traces if name in t.abs_err]
        stacked = np.concatenate(chunks, axis=0)
        for s in range(n_states):
            out[(name, f"x{s + 1}")] = (
                float(stacked[:, s].mean()),
                float(stacked[:, s].std()),
            )
    return out


# ---------------------------------------------------------------------------
# CSV / JSON serialization
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))

METRICS_HEADER = "filter,state,case,mean_abs_err,sd_abs_err,runs,wall_ms"
TRACE_HEADER = "step,filter,state,truth,estimate,abs_err,measurement"


def metrics_to_csv(table: MetricsTable) -> str:
    lines = [METRICS_HEADER]
    for r in table.rows:
        lines.append(
            f"{r.filter},{r.state},{r.case},{_fmt(r.mean_abs_err)},"
            f"{_fmt(r.sd_abs_err)},{r.runs},{_fmt(r.wall_ms)}"
        )
    return "\n".join(lines) + "\n"


def metrics_from_csv(text: str) -> MetricsTable:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or lines[0] != METRICS_HEADER:
        raise ConfigError(f"metrics csv: expected header {METRICS_HEADER!r}")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 7:
            raise ConfigError(f"metrics csv: malformed row {ln!r}")
        rows.append(
            MetricsRow(parts[0], parts[1], parts[2], float(parts[3]), float(parts[4]),
                       int(parts[5]), float(parts[6]))
        )
    return MetricsTable(rows)


def metrics_to_json(table: MetricsTable, cfg: ExperimentConfig | None = None) -> str:
    obj = {
        "rows": [
            {
                "filter": r.filter,
                "state": r.state,
                "case": r.case,
                "mean_abs_err": r.mean_abs_err,
                "sd_abs_err": r.sd_abs_err,
                "runs": r.runs,
                "wall_ms": r.wall_ms,
            }
            for r in table.rows
        ],
        "failures": table.failures,
    }
    if cfg is not None:
        obj["experiment"] = {
            "case": cfg.case,
            "horizon": cfg.horizon,
            "window_start": cfg.window_start,
            "delta_mode": cfg.delta_mode,
            "delta_grid": None if cfg.delta_grid is None else cfg.delta_grid.tolist(),
            "num_seeds": cfg.num_seeds,
            "seed_base": cfg.seed_base,
            "filters": list(cfg.filters),
            "basis_order": cfg.basis_order,
        }
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def trace_to_csv(trace: RunTrace) -> str:
    lines = [TRACE_HEADER]
    steps = trace.truth.shape[0]
    for name in sorted(trace.estimates):
        est = trace.estimates[name]
        err = trace.abs_err[name]
        for k in range(steps):
            y = "" if k == 0 else ";".join(_fmt(v) for v in trace.measurements[k - 1])
            for s in range(trace.truth.shape[1]):
                lines.append(
                    f"{k},{name},x{s + 1},{_fmt(trace.truth[k, s])},"
                    f"{_fmt(est[k, s])},{_fmt(err[k, s])},{y}"
                )
    return "\n".join(lines) + "\n"


def trace_from_csv(text: str, delta_label: str = "", seed: int = 0) -> RunTrace:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or lines[0] != TRACE_HEADER:
        raise ConfigError(f"trace csv: expected header {TRACE_HEADER!r}")
    cells = [ln.split(",") for ln in lines[1:]]
    filters = sorted({c[1] for c in cells})
    states = sorted({c[2] for c in cells})
    steps = max(int(c[0]) for c in cells) + 1
    n = len(states)
    truth = np.full((steps, n), np.nan)
    estimates = {f: np.full((steps, n), np.nan) for f in filters}
    abs_err = {f: np.full((steps, n), np.nan) for f in filters}
    meas_cells: dict = {}
    for c in cells:
        k, name, state = int(c[0]), c[1], c[2]
        s = states.index(state)
        truth[k, s] = float(c[3])
        estimates[name][k, s] = float(c[4])
        abs_err[name][k, s] = float(c[5])
        if k > 0 and c[6]:
            meas_cells[k - 1] = [float(v) for v in c[6].split(";")]
    p = len(next(iter(meas_cells.values()))) if meas_cells else 0
    meas = np.empty((steps - 1, p))
    for k, vals in meas_cells.items():
        meas[k] = vals
    return RunTrace(delta_label, seed, truth, meas, estimates, abs_err)


def trace_filename(trace: RunTrace) -> str:
    return f"trace_{trace.delta_label}_{trace.seed}.csv"
