"""Robust Kalman filtering for linear systems with random parameters.

Two filters share a conditional-moment formulation: a discrete-time filter
whose prior moments are exact parameter expectations evaluated by Gauss
quadrature, and a continuous-discrete filter that propagates chaos-expansion
coefficients of the conditional moments between measurements.  A benchmark
harness simulates ground truth, runs filter ensembles, and reports absolute
error statistics.
"""

from .basis import (
    Gaussian,
    OrthoBasis,
    ParameterDistribution,
    Poly,
    QuadraticBasis,
    QuadratureRule,
    Uniform,
    basis_var_matrix,
    build_basis,
    build_quadratic_basis,
    build_quadrature,
    expect,
    point_mass_rule,
)
from .cdfilter import (
    GalerkinOperators,
    PceState,
    build_galerkin,
    cd_step,
    default_substeps,
    integrate_pce,
    lift,
    nominal_hybrid_step,
    reconstruct_prior,
)
from .configio import build_experiment, parse_config, parse_system, serialize_config
from .dtfilter import (
    DtMomentTables,
    GaussianBelief,
    build_dt_tables,
    dt_propagate,
    kalman_update,
    nominal_kf_step,
)
from .errors import ConfigError, NumericalError
from .harness import (
    CounterRng,
    ExperimentConfig,
    MetricsTable,
    RunTrace,
    run_ensemble,
    simulate_truth_ct,
    simulate_truth_dt,
    van_loan_discretize,
)
from .system import (
    InitialBelief,
    MatrixPolynomial,
    UncertainLinearSystem,
    eval_A,
    eval_B,
    mean_A,
    mean_delta,
)

__all__ = [name for name in dir() if not name.startswith("_")]
