"""Orthogonal polynomial bases, Gauss quadrature, and the quadratic product basis.

Everything here is defined relative to a distribution p(d) over the uncertain
parameter vector d in R^dims with mutually independent components.  Basis
polynomials are orthogonal with respect to p, i.e. E[phi_i phi_j] = h_i delta_ij,
and expectations are evaluated by tensorized Gauss rules that are exact for
polynomial integrands of sufficient degree.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import HermiteE, Legendre, Polynomial

from .errors import ConfigError

logger = logging.getLogger(__name__)

# Exactness degree reported by point-mass rules: a single node carries the whole
# measure, so every polynomial is integrated exactly.
POINT_MASS_EXACTNESS = 10**9


@dataclass(frozen=True)
class Uniform:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ConfigError(
                f"uniform marginal requires lower < upper, got [{self.lower}, {self.upper}]"
            )

    @property
    def mean(self) -> float:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class Gaussian:
    mean: float
    stddev: float

    def __post_init__(self):
        if not self.stddev > 0:
            raise ConfigError(f"gaussian marginal requires stddev > 0, got {self.stddev}")


@dataclass(frozen=True)
class ParameterDistribution:
    """Product distribution of independent Uniform/Gaussian marginals."""

    marginals: tuple

    def __post_init__(self):
        if len(self.marginals) == 0:
            raise ConfigError("parameter distribution needs at least one dimension")
        for m in self.marginals:
            if not isinstance(m, (Uniform, Gaussian)):
                raise ConfigError(f"unsupported marginal distribution {type(m).__name__}")

    @property
    def dims(self) -> int:
        return len(self.marginals)

    def mean(self) -> np.ndarray:
        return np.array([m.mean for m in self.marginals])


def _marginal(dist: ParameterDistribution, j: int):
    return dist.marginals[j]


# ---------------------------------------------------------------------------
# Polynomials over the monomial dictionary
# ---------------------------------------------------------------------------

def monomial_indices(dims: int, max_degree: int) -> list[tuple[int, ...]]:
    """All exponent tuples with total degree <= max_degree, graded lexicographic."""
    out = [
        alpha
        for alpha in itertools.product(range(max_degree + 1), repeat=dims)
        if sum(alpha) <= max_degree
    ]
    out.sort(key=lambda a: (sum(a), a))
    return out


class Poly:
    """Sparse polynomial in the parameter variables.

    Terms map exponent tuples to coefficients; the variables are the *original*
    parameter coordinates (not the standardized ones), so evaluation takes raw
    parameter points.
    """

    __slots__ = ("dims", "terms")

    def __init__(self, dims: int, terms: dict | None = None):
        self.dims = dims
        self.terms = {
            tuple(a): float(c) for a, c in (terms or {}).items() if c != 0.0
        }
        if not self.terms:
            self.terms = {}

    @classmethod
    def constant(cls, dims: int, value: float) -> "Poly":
        return cls(dims, {(0,) * dims: value})

    @classmethod
    def from_univariate(cls, dims: int, dim: int, coeffs: np.ndarray) -> "Poly":
        """Embed a 1-D coefficient array (ascending powers of x_dim) into dims vars."""
        terms = {}
        for k, c in enumerate(np.atleast_1d(coeffs)):
            if c != 0.0:
                alpha = [0] * dims
                alpha[dim] = k
                terms[tuple(alpha)] = float(c)
        return cls(dims, terms)

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.terms), default=0)

    def __mul__(self, other: "Poly") -> "Poly":
        terms: dict = {}
        for a, ca in self.terms.items():
            for b, cb in other.terms.items():
                key = tuple(x + y for x, y in zip(a, b))
                terms[key] = terms.get(key, 0.0) + ca * cb
        return Poly(self.dims, terms)

    def __add__(self, other: "Poly") -> "Poly":
        terms = dict(self.terms)
        for b, cb in other.terms.items():
            terms[b] = terms.get(b, 0.0) + cb
        return Poly(self.dims, terms)

    def scaled(self, factor: float) -> "Poly":
        return Poly(self.dims, {a: c * factor for a, c in self.terms.items()})

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at points of shape (k, dims) or (dims,); returns (k,) or scalar."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dims:
            raise ConfigError(
                f"point dimension {pts.shape[1]} does not match polynomial dims {self.dims}"
            )
        if not self.terms:
            vals = np.zeros(pts.shape[0])
        else:
            # Power tables per dimension, built by repeated multiplication.
            maxdeg = [0] * self.dims
            for a in self.terms:
                for j, e in enumerate(a):
                    maxdeg[j] = max(maxdeg[j], e)
            pows = []
            for j in range(self.dims):
                table = np.ones((maxdeg[j] + 1, pts.shape[0]))
                for k in range(1, maxdeg[j] + 1):
                    table[k] = table[k - 1] * pts[:, j]
                pows.append(table)
            vals = np.zeros(pts.shape[0])
            for a, c in self.terms.items():
                term = np.full(pts.shape[0], c)
                for j, e in enumerate(a):
                    if e:
                        term = term * pows[j][e]
                vals += term
        if np.asarray(points).ndim == 1:
            return float(vals[0])
        return vals

    def coefficient_vector(self, indices: list[tuple[int, ...]]) -> np.ndarray:
        return np.array([self.terms.get(a, 0.0) for a in indices])

    def __repr__(self):
        return f"Poly(dims={self.dims}, terms={self.terms})"


# ---------------------------------------------------------------------------
# Orthogonal basis
# ---------------------------------------------------------------------------

def _univariate_family(marginal, order: int) -> tuple[list[np.ndarray], np.ndarray]:
    """Monomial coefficients and squared norms of the orthogonal family up to order.

    Legendre (mapped to the support interval) for uniform marginals, probabilists'
    Hermite (standardized) for gaussian ones.  Norms are h_k = E[phi_k^2]:
    1/(2k+1) for Legendre, k! for Hermite.
    """
    coeff_list, norms = [], []
    for k in range(order + 1):
        if isinstance(marginal, Uniform):
            p = Legendre.basis(k, domain=[marginal.lower, marginal.upper])
            norms.append(1.0 / (2 * k + 1))
        elif isinstance(marginal, Gaussian):
            lo = marginal.mean - marginal.stddev
            hi = marginal.mean + marginal.stddev
            p = HermiteE.basis(k, domain=[lo, hi])
            norms.append(float(math.factorial(k)))
        else:
            raise ConfigError(f"unsupported marginal distribution {type(marginal).__name__}")
        coeff_list.append(p.convert(kind=Polynomial).coef)
    return coeff_list, np.array(norms)


@dataclass(frozen=True)
class OrthoBasis:
    """Tensor-product orthogonal basis truncated at a total degree.

    multi_indices[i] holds the per-dimension univariate degrees of phi_i; the
    ordering is graded lexicographic with phi_0 = 1 first.  norms[i] = E[phi_i^2].
    """

    distribution: ParameterDistribution
    total_order: int
    multi_indices: tuple
    functions: tuple
    norms: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return len(self.functions)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Basis matrix of shape (num_points, count)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.column_stack([f(pts) for f in self.functions])


def build_basis(dist: ParameterDistribution, total_order: int) -> OrthoBasis:
    """Construct the orthogonal basis for dist, truncated at total degree."""
    if total_order < 0:
        raise ConfigError(f"total_order must be >= 0, got {total_order}")
    d = dist.dims
    families = []
    fam_norms = []
    for j in range(d):
        coeffs, norms = _univariate_family(_marginal(dist, j), total_order)
        families.append([Poly.from_univariate(d, j, c) for c in coeffs])
        fam_norms.append(norms)
    indices = [
        alpha
        for alpha in itertools.product(range(total_order + 1), repeat=d)
        if sum(alpha) <= total_order
    ]
    indices.sort(key=lambda a: (sum(a), a))
    functions, norms = [], []
    for alpha in indices:
        f = Poly.constant(d, 1.0)
        h = 1.0
        for j, deg in enumerate(alpha):
            f = f * families[j][deg]
            h *= fam_norms[j][deg]
        functions.append(f)
        norms.append(h)
    expected = math.comb(d + total_order, total_order)
    assert len(functions) == expected
    return OrthoBasis(dist, total_order, tuple(indices), tuple(functions), np.array(norms))


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and probability weights for expectations against p(d)."""

    nodes: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.atleast_2d(np.asarray(self.nodes, dtype=float)))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if np.any(self.weights <= 0):
            raise ConfigError("quadrature weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ConfigError(f"quadrature weights sum to {self.weights.sum()}, expected 1")


def build_quadrature(dist: ParameterDistribution, points_per_dim: int) -> QuadratureRule:
    """Tensorized Gauss rule: Gauss-Legendre per uniform dim, Gauss-Hermite per
    gaussian dim, exact for per-dimension degree <= 2*points_per_dim - 1."""
    if points_per_dim < 1:
        raise ConfigError(f"points_per_dim must be >= 1, got {points_per_dim}")
    axes = []
    for m in dist.marginals:
        if isinstance(m, Uniform):
            x, w = np.polynomial.legendre.leggauss(points_per_dim)
            nodes = m.mean + 0.5 * (m.upper - m.lower) * x
            weights = w / 2.0
        else:
            x, w = np.polynomial.hermite_e.hermegauss(points_per_dim)
            nodes = m.mean + m.stddev * x
            weights = w / math.sqrt(2.0 * math.pi)
        axes.append((nodes, weights))
    node_rows, weight_vals = [], []
    for combo in itertools.product(*[range(points_per_dim)] * dist.dims):
        node_rows.append([axes[j][0][k] for j, k in enumerate(combo)])
        weight_vals.append(np.prod([axes[j][1][k] for j, k in enumerate(combo)]))
    weights = np.array(weight_vals)
    return QuadratureRule(np.array(node_rows), weights / weights.sum(), 2 * points_per_dim - 1)


def point_mass_rule(value) -> QuadratureRule:
    """One-node rule carrying all mass at a fixed parameter value.

    Represents a degenerate (deterministic) parameter: expectations reduce to
    evaluation at the point, exactly, for every polynomial integrand.
    """
    v = np.atleast_1d(np.asarray(value, dtype=float))
    return QuadratureRule(v[None, :], np.array([1.0]), POINT_MASS_EXACTNESS)


def expect(rule: QuadratureRule, f) -> np.ndarray:
    """Weighted sum of f over the rule's nodes; f maps a point to a scalar/array."""
    acc = None
    for node, w in zip(rule.nodes, rule.weights):
        val = w * np.asarray(f(node), dtype=float)
        acc = val if acc is None else acc + val
    return acc


# ---------------------------------------------------------------------------
# Quadratic product basis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticBasis:
    """Linearly independent subset of the products phi_i*phi_j.

    The covariance process is expanded in these functions; pair_map[k] records
    which product (i, j) theta_k is.  theta_0 = phi_0*phi_0 = 1 always, so a
    parameter-independent matrix lifts exactly into the leading block.
    """

    parent: OrthoBasis
    functions: tuple
    pair_map: tuple

    @property
    def count(self) -> int:
        return len(self.functions)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.column_stack([f(pts) for f in self.functions])


def _product_rule(basis: OrthoBasis) -> QuadratureRule:
    # Exact for fourth-order products of basis functions (degree 4r).
    return build_quadrature(basis.distribution, 2 * basis.total_order + 1)


def build_quadratic_basis(
    basis: OrthoBasis, rule: QuadratureRule | None = None, rel_tol: float = 1e-10
) -> QuadraticBasis:
    """Select an independent spanning subset of the candidate products.

    Candidates are all products phi_i*phi_j with i <= j.  Selection runs a
    pivoted Cholesky (largest remaining diagonal) on the candidate Gram matrix,
    stopping once the residual falls below rel_tol relative to the largest
    initial diagonal.  The constant product (0, 0) is pivoted first so that the
    leading function is identically 1.  The selected count is rank-determined,
    not assumed.
    """
    if rule is None:
        rule = _product_rule(basis)
    pairs = [
        (i, j) for i in range(basis.count) for j in range(i, basis.count)
    ]
    prods = [basis.functions[i] * basis.functions[j] for i, j in pairs]
    vals = np.column_stack([p(rule.nodes) for p in prods])  # (q, ncand)
    gram = (vals.T * rule.weights) @ vals
    ncand = len(pairs)
    resid = np.diag(gram).copy()
    threshold = rel_tol * resid.max()
    low = np.zeros((ncand, 0))
    selected: list[int] = []
    while True:
        if not selected:
            pivot = 0  # force the constant product first
        else:
            remaining = [c for c in range(ncand) if c not in selected]
            pivot = max(remaining, key=lambda c: resid[c], default=None)
            if pivot is None or resid[pivot] <= threshold:
                break
        col = (gram[:, pivot] - low @ low[pivot]) / math.sqrt(resid[pivot])
        low = np.column_stack([low, col])
        selected.append(pivot)
        resid = resid - col**2
        resid[selected] = 0.0
    selected.sort(key=lambda c: (pairs[c][0] + pairs[c][1], pairs[c]))
    # the 2(N-1)+1 count sometimes quoted for this construction undercounts the
    # span (univariate order-N products span 2N+1 degrees); surface the gap
    top = basis.count - 1
    if top >= 1 and len(selected) != 2 * (top - 1) + 1:
        logger.warning(
            "quadratic basis rank %d differs from the 2(N-1)+1 = %d count for N = %d",
            len(selected), 2 * (top - 1) + 1, top,
        )
    return QuadraticBasis(
        basis,
        tuple(prods[c] for c in selected),
        tuple(pairs[c] for c in selected),
    )


def product_in_quadratic_basis(
    qbasis: QuadraticBasis, i: int, j: int, rule: QuadratureRule | None = None
) -> tuple[np.ndarray, float]:
    """Coefficients of phi_i*phi_j in the theta functions, plus the L2 residual."""
    if rule is None:
        rule = _product_rule(qbasis.parent)
    theta_vals = qbasis.evaluate(rule.nodes)
    target = qbasis.parent.functions[i] * qbasis.parent.functions[j]
    tvals = target(rule.nodes)
    gram = (theta_vals.T * rule.weights) @ theta_vals
    rhs = (theta_vals.T * rule.weights) @ tvals
    coeffs = np.linalg.solve(gram, rhs)
    resid_sq = float(rule.weights @ (tvals - theta_vals @ coeffs) ** 2)
    return coeffs, math.sqrt(max(resid_sq, 0.0))


def basis_var_matrix(basis: OrthoBasis, rule: QuadratureRule) -> np.ndarray:
    """Covariance matrix of the stacked basis vector: E[PP^T] - E[P]E[P]^T.

    For an orthogonal family this is diag(0, h_1, ..., h_N) up to quadrature
    error; entry (0, 0) vanishes because phi_0 is deterministic.
    """
    if rule.exactness_degree < 2 * basis.total_order:
        raise ConfigError(
            f"rule exactness {rule.exactness_degree} is below 2*order = {2 * basis.total_order}"
        )
    vals = basis.evaluate(rule.nodes)
    mean = rule.weights @ vals
    return (vals.T * rule.weights) @ vals - np.outer(mean, mean)
