"""Uncertain linear state-space model with polynomial parameter dependence.

The dynamics matrices A and B are matrix-valued polynomials in the random
parameter vector; C, Q, R are deterministic.  In discrete time the parameter
resamples every step; in continuous time it is held fixed over each
measurement interval of length sample_period.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import ParameterDistribution, Poly, QuadratureRule
from .errors import ConfigError


@dataclass(frozen=True)
class MatrixPolynomial:
    """Matrix whose entries are polynomials in the parameter vector."""

    rows: int
    cols: int
    entries: tuple  # tuple of tuples of Poly

    def __post_init__(self):
        if len(self.entries) != self.rows or any(len(r) != self.cols for r in self.entries):
            raise ConfigError(
                f"matrix polynomial entries do not match shape {self.rows}x{self.cols}"
            )

    @property
    def degree(self) -> int:
        return max(p.degree for row in self.entries for p in row)

    def __call__(self, point: np.ndarray) -> np.ndarray:
        out = np.empty((self.rows, self.cols))
        for i, row in enumerate(self.entries):
            for j, p in enumerate(row):
                out[i, j] = p(np.asarray(point, dtype=float))
        return out

    def at_nodes(self, nodes: np.ndarray) -> np.ndarray:
        """Stack of evaluations, shape (num_nodes, rows, cols)."""
        pts = np.atleast_2d(np.asarray(nodes, dtype=float))
        out = np.empty((pts.shape[0], self.rows, self.cols))
        for i, row in enumerate(self.entries):
            for j, p in enumerate(row):
                out[:, i, j] = p(pts)
        return out

    @classmethod
    def constant(cls, matrix: np.ndarray, dims: int) -> "MatrixPolynomial":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        entries = tuple(
            tuple(Poly.constant(dims, m[i, j]) for j in range(m.shape[1]))
            for i in range(m.shape[0])
        )
        return cls(m.shape[0], m.shape[1], entries)


def _check_symmetric_psd(mat: np.ndarray, name: str, definite: bool = False):
    if mat.shape[0] != mat.shape[1]:
        raise ConfigError(f"{name} must be square, got {mat.shape}")
    if not np.allclose(mat, mat.T, atol=1e-12):
        raise ConfigError(f"{name} must be symmetric")
    if definite:
        try:
            np.linalg.cholesky(mat)
        except np.linalg.LinAlgError:
            raise ConfigError(f"{name} must be positive definite") from None
    else:
        eigmin = np.linalg.eigvalsh(mat).min()
        if eigmin < -1e-12 * max(np.trace(mat), 1.0):
            raise ConfigError(f"{name} must be positive semidefinite (min eig {eigmin:.3e})")


@dataclass(frozen=True)
class UncertainLinearSystem:
    """Linear system with random-parameter A(d), B(d) and fixed C, Q, R."""

    A: MatrixPolynomial
    B: MatrixPolynomial
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    delta_dist: ParameterDistribution
    time_mode: str  # "dt" or "ct"
    sample_period: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "C", np.atleast_2d(np.asarray(self.C, dtype=float)))
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))
        n, m, p = self.A.rows, self.B.cols, self.C.shape[0]
        if self.A.cols != n:
            raise ConfigError(f"A must be square, got {self.A.rows}x{self.A.cols}")
        if self.B.rows != n:
            raise ConfigError(f"B has {self.B.rows} rows, expected state dim {n}")
        if self.C.shape[1] != n:
            raise ConfigError(f"C has {self.C.shape[1]} columns, expected state dim {n}")
        if self.Q.shape != (m, m):
            raise ConfigError(f"Q must be {m}x{m}, got {self.Q.shape}")
        if self.R.shape != (p, p):
            raise ConfigError(f"R must be {p}x{p}, got {self.R.shape}")
        _check_symmetric_psd(self.Q, "Q")
        _check_symmetric_psd(self.R, "R", definite=True)
        if self.time_mode not in ("dt", "ct"):
            raise ConfigError(f"time_mode must be 'dt' or 'ct', got {self.time_mode!r}")
        if self.time_mode == "ct":
            if self.sample_period is None or not self.sample_period > 0:
                raise ConfigError("ct systems require sample_period > 0")

    @property
    def n(self) -> int:
        return self.A.rows

    @property
    def m(self) -> int:
        return self.B.cols

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class InitialBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).ravel())
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ConfigError(
                f"initial covariance shape {self.cov.shape} does not match mean size {self.mean.size}"
            )
        _check_symmetric_psd(self.cov, "initial covariance")


def eval_A(sys: UncertainLinearSystem, delta) -> np.ndarray:
    return sys.A(delta)


def eval_B(sys: UncertainLinearSystem, delta) -> np.ndarray:
    return sys.B(delta)


def mean_A(sys: UncertainLinearSystem, rule: QuadratureRule) -> np.ndarray:
    """E[A(d)] by quadrature (exact when rule exactness >= deg A)."""
    nodes = sys.A.at_nodes(rule.nodes)
    return np.einsum("q,qij->ij", rule.weights, nodes)


def mean_B(sys: UncertainLinearSystem, rule: QuadratureRule) -> np.ndarray:
    nodes = sys.B.at_nodes(rule.nodes)
    return np.einsum("q,qij->ij", rule.weights, nodes)


def mean_delta(sys: UncertainLinearSystem) -> np.ndarray:
    """Closed-form mean of the parameter distribution (the nominal point)."""
    return sys.delta_dist.mean()
