"""Discrete-time robust Kalman filter via conditional-moment propagation.

For a fixed parameter value the propagation is the standard one; the total
prior moments combine the conditional ones over the parameter distribution:

    mu-  = E[A] mu+
    Sig- = E[A Sig+ A^T] + E[B Q B^T] + E[(A - E[A]) mu+ mu+^T (A - E[A])^T]

The last term is the variance contributed by the parameter acting on the
(deterministic) posterior mean.  The measurement update is the standard
Kalman update, since C carries no parameter dependence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .basis import QuadratureRule, build_quadrature
from .errors import NumericalError
from .system import UncertainLinearSystem, mean_delta


def symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


@dataclass
class GaussianBelief:
    """Mean and symmetric PSD covariance of the state estimate."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).ravel()
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if np.max(np.abs(self.cov - self.cov.T)) > 1e-12:
            raise NumericalError("belief covariance is not symmetric")
        tr = max(float(np.trace(self.cov)), 0.0)
        eigmin = float(np.linalg.eigvalsh(self.cov).min()) if self.cov.size else 0.0
        if eigmin < -1e-10 * max(tr, 1e-300):
            raise NumericalError(
                f"belief covariance indefinite: min eig {eigmin:.3e}, trace {tr:.3e}"
            )


@dataclass(frozen=True)
class DtMomentTables:
    """Precomputed node evaluations for the propagation expectations."""

    nodes: np.ndarray
    weights: np.ndarray
    a_nodes: np.ndarray  # (q, n, n)
    a_bar: np.ndarray
    d_nodes: np.ndarray  # A(node) - E[A]
    bqb_mean: np.ndarray  # E[B Q B^T]


def default_dt_rule(sys: UncertainLinearSystem) -> QuadratureRule:
    # Highest integrand degree is 2*deg in A Sig A^T / B Q B^T / deviation terms.
    max_deg = 2 * max(sys.A.degree, sys.B.degree)
    return build_quadrature(sys.delta_dist, max_deg + 1)


def build_dt_tables(
    sys: UncertainLinearSystem, rule: QuadratureRule | None = None
) -> DtMomentTables:
    if rule is None:
        rule = default_dt_rule(sys)
    a_nodes = sys.A.at_nodes(rule.nodes)
    b_nodes = sys.B.at_nodes(rule.nodes)
    a_bar = np.einsum("q,qij->ij", rule.weights, a_nodes)
    bqb = np.einsum("q,qij,jk,qlk->il", rule.weights, b_nodes, sys.Q, b_nodes)
    return DtMomentTables(
        nodes=rule.nodes,
        weights=rule.weights,
        a_nodes=a_nodes,
        a_bar=a_bar,
        d_nodes=a_nodes - a_bar,
        bqb_mean=symmetrize(bqb),
    )


def dt_propagate(tables: DtMomentTables, posterior: GaussianBelief) -> GaussianBelief:
    """One propagation step: posterior at k-1 to total prior at k."""
    mu = posterior.mean
    mean_prior = tables.a_bar @ mu
    spread = np.einsum("q,qij,jk,qlk->il", tables.weights, tables.a_nodes, posterior.cov,
                       tables.a_nodes)
    mu_outer = np.outer(mu, mu)
    extra = np.einsum("q,qij,jk,qlk->il", tables.weights, tables.d_nodes, mu_outer,
                      tables.d_nodes)
    return GaussianBelief(mean_prior, symmetrize(spread + tables.bqb_mean + extra))


def kalman_update(
    prior: GaussianBelief, y: np.ndarray, C: np.ndarray, R: np.ndarray
) -> GaussianBelief:
    """Standard Kalman measurement update with gain from a Cholesky solve."""
    y = np.asarray(y, dtype=float).ravel()
    innov_cov = C @ prior.cov @ C.T + R
    try:
        factor = cho_factor(symmetrize(innov_cov))
    except np.linalg.LinAlgError as exc:  # unreachable with positive definite R
        raise NumericalError(f"innovation covariance not positive definite: {exc}") from exc
    gain = cho_solve(factor, C @ prior.cov).T
    mean = prior.mean + gain @ (y - C @ prior.mean)
    cov = symmetrize((np.eye(prior.mean.size) - gain @ C) @ prior.cov)
    return GaussianBelief(mean, cov)


def nominal_dt_propagate(
    a0: np.ndarray, bqb0: np.ndarray, posterior: GaussianBelief
) -> GaussianBelief:
    return GaussianBelief(a0 @ posterior.mean, symmetrize(a0 @ posterior.cov @ a0.T + bqb0))


def nominal_kf_step(
    sys: UncertainLinearSystem, posterior: GaussianBelief, y: np.ndarray
) -> GaussianBelief:
    """Standard Kalman step on the plant frozen at the mean parameter value."""
    d0 = mean_delta(sys)
    a0 = sys.A(d0)
    b0 = sys.B(d0)
    prior = nominal_dt_propagate(a0, b0 @ sys.Q @ b0.T, posterior)
    return kalman_update(prior, y, sys.C, sys.R)
