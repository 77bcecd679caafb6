"""Continuous-discrete robust Kalman filter via Galerkin-projected chaos ODEs.

Between measurements the conditional mean obeys mu' = A(d) mu and the
conditional covariance obeys the Lyapunov equation
Sig' = A(d) Sig + Sig A(d)^T + B(d) Q B(d)^T, with d held fixed over the
interval.  Both processes are expanded in polynomials of d: the mean in the
orthogonal basis phi_i, the covariance in the independent quadratic basis
theta_i.  Projecting the equation residuals onto the bases gives linear ODEs
for the stacked coefficients, which are integrated with fixed-step RK4.  The
total prior is recovered from the coefficients via the law of total variance,
and the measurement update is shared with the discrete filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import OrthoBasis, QuadraticBasis, QuadratureRule, build_quadrature
from .dtfilter import GaussianBelief, kalman_update, symmetrize
from .errors import ConfigError, NumericalError
from .system import UncertainLinearSystem


@dataclass
class PceState:
    """Stacked chaos coefficients of the conditional moments.

    mu holds the N+1 mean coefficient blocks flattened to length n*(N+1);
    sigma holds the M+1 covariance coefficient blocks, shape (M+1, n, n).
    """

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).ravel()
        self.sigma = np.asarray(self.sigma, dtype=float)


@dataclass(frozen=True)
class GalerkinOperators:
    """Projected expectation tensors driving the coefficient ODEs.

    a_mu block (i, j) is E[phi_i phi_j A]/h_i; s_blocks[i, j] is
    E[theta_i theta_j A]; t_blocks[i] is E[theta_i B Q B^T]; g_theta is
    E[Theta Theta^T] with its inverse cached.  phi_bar/theta_bar are the basis
    means and var_phi is Cov(Phi), used to rebuild total moments.
    """

    n: int
    num_phi: int
    num_theta: int
    a_mu: np.ndarray
    s_blocks: np.ndarray
    g_theta: np.ndarray
    g_theta_inv: np.ndarray
    t_blocks: np.ndarray
    phi_bar: np.ndarray
    theta_bar: np.ndarray
    var_phi: np.ndarray
    norms: np.ndarray


def default_cd_rule(sys: UncertainLinearSystem, basis: OrthoBasis) -> QuadratureRule:
    r = basis.total_order
    max_deg = max(4 * r + sys.A.degree, 2 * r + 2 * sys.B.degree, 4 * r)
    return build_quadrature(sys.delta_dist, max_deg + 1)


def build_galerkin(
    sys: UncertainLinearSystem,
    basis: OrthoBasis,
    qbasis: QuadraticBasis,
    rule: QuadratureRule | None = None,
) -> GalerkinOperators:
    """Assemble all expectation tensors by quadrature.

    Orthogonality makes E[Phi Phi^T] diagonal, so the mean operator needs only
    a division by the norms; the theta Gram matrix is small and inverted once.
    """
    if rule is None:
        rule = default_cd_rule(sys, basis)
    n = sys.n
    phi = basis.evaluate(rule.nodes)           # (q, N+1)
    theta = qbasis.evaluate(rule.nodes)        # (q, M+1)
    a_nodes = sys.A.at_nodes(rule.nodes)       # (q, n, n)
    b_nodes = sys.B.at_nodes(rule.nodes)
    w = rule.weights

    num_phi, num_theta = basis.count, qbasis.count
    a_mu = np.zeros((num_phi * n, num_phi * n))
    for i in range(num_phi):
        blocks = np.einsum("q,qj,qab->jab", w * phi[:, i], phi, a_nodes) / basis.norms[i]
        for j in range(num_phi):
            a_mu[i * n:(i + 1) * n, j * n:(j + 1) * n] = blocks[j]

    s_blocks = np.einsum("qi,qj,q,qab->ijab", theta, theta, w, a_nodes)
    g_theta = (theta.T * w) @ theta
    try:
        np.linalg.cholesky(g_theta)
    except np.linalg.LinAlgError:
        raise ConfigError("quadratic basis Gram matrix is not positive definite") from None
    evals = np.linalg.eigvalsh(g_theta)
    if evals.min() <= 1e-12 * evals.max():
        raise ConfigError(
            f"quadratic basis Gram matrix is numerically rank deficient "
            f"(eig ratio {evals.min() / evals.max():.2e})"
        )
    bqb_nodes = np.einsum("qij,jk,qlk->qil", b_nodes, sys.Q, b_nodes)
    t_blocks = np.einsum("qi,q,qab->iab", theta, w, bqb_nodes)

    phi_bar = w @ phi
    theta_bar = w @ theta
    var_phi = (phi.T * w) @ phi - np.outer(phi_bar, phi_bar)
    return GalerkinOperators(
        n=n,
        num_phi=num_phi,
        num_theta=num_theta,
        a_mu=a_mu,
        s_blocks=s_blocks,
        g_theta=g_theta,
        g_theta_inv=np.linalg.inv(g_theta),
        t_blocks=t_blocks,
        phi_bar=phi_bar,
        theta_bar=theta_bar,
        var_phi=var_phi,
        norms=basis.norms.copy(),
    )


def lift(posterior: GaussianBelief, ops: GalerkinOperators) -> PceState:
    """Project a parameter-independent posterior onto the bases.

    phi_0 = theta_0 = 1, so the posterior occupies the leading blocks and all
    higher coefficients vanish.
    """
    mu = np.zeros(ops.num_phi * ops.n)
    mu[: ops.n] = posterior.mean
    sigma = np.zeros((ops.num_theta, ops.n, ops.n))
    sigma[0] = posterior.cov
    return PceState(mu, sigma)


def _sigma_rhs(ops: GalerkinOperators, sigma: np.ndarray) -> np.ndarray:
    # Per-block right-hand sides S_jk Sig_k + Sig_k S_jk^T + T_j, then G^-1.
    t1 = np.einsum("jkab,kbc->jac", ops.s_blocks, sigma)
    t2 = np.einsum("kab,jkcb->jac", sigma, ops.s_blocks)
    return np.einsum("ij,jab->iab", ops.g_theta_inv, t1 + t2 + ops.t_blocks)


def integrate_pce(
    ops: GalerkinOperators, state: PceState, dt: float, substeps: int
) -> PceState:
    """Classical RK4 with substeps fixed steps over an interval of length dt."""
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if substeps < 1:
        raise ConfigError(f"substeps must be >= 1, got {substeps}")
    h = dt / substeps
    mu = state.mu.copy()
    sigma = state.sigma.copy()
    for step in range(substeps):
        k1m = ops.a_mu @ mu
        k1s = _sigma_rhs(ops, sigma)
        k2m = ops.a_mu @ (mu + 0.5 * h * k1m)
        k2s = _sigma_rhs(ops, sigma + 0.5 * h * k1s)
        k3m = ops.a_mu @ (mu + 0.5 * h * k2m)
        k3s = _sigma_rhs(ops, sigma + 0.5 * h * k2s)
        k4m = ops.a_mu @ (mu + h * k3m)
        k4s = _sigma_rhs(ops, sigma + h * k3s)
        mu = mu + (h / 6.0) * (k1m + 2 * k2m + 2 * k3m + k4m)
        sigma = sigma + (h / 6.0) * (k1s + 2 * k2s + 2 * k3s + k4s)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise NumericalError(f"non-finite chaos coefficients at substep {step}")
    return PceState(mu, sigma)


def reconstruct_prior(ops: GalerkinOperators, state: PceState) -> GaussianBelief:
    """Total prior from the coefficients via the law of total variance.

    mean  = sum_i E[phi_i] mu_i  (= mu_0 for an orthogonal family)
    cov   = sum_i E[theta_i] Sig_i + Mu Cov(Phi) Mu^T,  Mu = [mu_0 ... mu_N]
    """
    mu_mat = state.mu.reshape(ops.num_phi, ops.n).T  # n x (N+1)
    mean = mu_mat @ ops.phi_bar
    cov = np.einsum("i,iab->ab", ops.theta_bar, state.sigma)
    cov = symmetrize(cov + mu_mat @ ops.var_phi @ mu_mat.T)
    tr = max(float(np.trace(cov)), 1e-300)
    evals, vecs = np.linalg.eigh(cov)
    if evals.min() < -1e-8 * tr:
        raise NumericalError(
            f"reconstructed prior covariance indefinite (min eig {evals.min():.3e}, "
            f"trace {tr:.3e}); basis order is likely too low"
        )
    if evals.min() < 0.0:
        # within tolerance: floor the spectrum so downstream checks hold
        cov = symmetrize(vecs @ np.diag(np.clip(evals, 0.0, None)) @ vecs.T)
    return GaussianBelief(mean, cov)


def default_substeps(dt: float) -> int:
    return max(1, math.ceil(dt / 0.01))


def cd_step(
    ops: GalerkinOperators,
    posterior: GaussianBelief,
    y: np.ndarray,
    dt: float,
    substeps: int,
    C: np.ndarray,
    R: np.ndarray,
) -> GaussianBelief:
    """One measurement interval: lift, integrate, rebuild the prior, update."""
    state = integrate_pce(ops, lift(posterior, ops), dt, substeps)
    prior = reconstruct_prior(ops, state)
    return kalman_update(prior, y, C, R)


# ---------------------------------------------------------------------------
# Nominal hybrid filter (deterministic plant), used as baseline and oracle
# ---------------------------------------------------------------------------

def mean_lyapunov_rk4(
    a0: np.ndarray,
    bqb0: np.ndarray,
    mu: np.ndarray,
    cov: np.ndarray,
    dt: float,
    substeps: int,
) -> tuple[np.ndarray, np.ndarray]:
    """RK4 on the n-dimensional mean/Lyapunov ODEs of a fixed plant (raw arrays)."""
    h = dt / substeps
    mu = np.asarray(mu, dtype=float).copy()
    cov = np.asarray(cov, dtype=float).copy()

    def rhs(m, s):
        return a0 @ m, a0 @ s + s @ a0.T + bqb0

    for _ in range(substeps):
        k1m, k1s = rhs(mu, cov)
        k2m, k2s = rhs(mu + 0.5 * h * k1m, cov + 0.5 * h * k1s)
        k3m, k3s = rhs(mu + 0.5 * h * k2m, cov + 0.5 * h * k2s)
        k4m, k4s = rhs(mu + h * k3m, cov + h * k3s)
        mu = mu + (h / 6.0) * (k1m + 2 * k2m + 2 * k3m + k4m)
        cov = cov + (h / 6.0) * (k1s + 2 * k2s + 2 * k3s + k4s)
    return mu, cov


def nominal_hybrid_propagate(
    a0: np.ndarray, bqb0: np.ndarray, posterior: GaussianBelief, dt: float, substeps: int
) -> GaussianBelief:
    mu, cov = mean_lyapunov_rk4(a0, bqb0, posterior.mean, posterior.cov, dt, substeps)
    return GaussianBelief(mu, symmetrize(cov))


def nominal_hybrid_step(
    a0: np.ndarray,
    bqb0: np.ndarray,
    posterior: GaussianBelief,
    y: np.ndarray,
    dt: float,
    substeps: int,
    C: np.ndarray,
    R: np.ndarray,
) -> GaussianBelief:
    prior = nominal_hybrid_propagate(a0, bqb0, posterior, dt, substeps)
    return kalman_update(prior, y, C, R)
