"""Clamped B-spline bases, monotone warping functions, and P-spline smoothing.

All smoothers in the package go through :func:`penalized_spline_fit`; the
warping representation used by registration is a spline with nondecreasing
coefficients, which is a sufficient condition for a nondecreasing function.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import InvalidRange, NonFiniteInput, OutOfDomain, SingularSystem

#: sentinel for GCV-selected smoothing in penalized_spline_fit
AUTO = "auto"

# GCV grid: 31 log-spaced values, deterministic and derivative-free.
GCV_GRID = np.logspace(-6.0, 6.0, 31)

_ENDPOINT_SLACK = 1e-12


@dataclass(frozen=True)
class BsplineBasis:
    """Open (clamped) B-spline basis with uniform interior knots on [a, b]."""

    degree: int = 3
    interior_knot_count: int = 0
    a: float = 0.0
    b: float = 1.0
    knots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.degree < 1:
            raise InvalidRange("degree must be >= 1")
        if self.interior_knot_count < 0:
            raise InvalidRange("interior_knot_count must be >= 0")
        if not self.a < self.b:
            raise InvalidRange(f"empty interval [{self.a}, {self.b}]")
        interior = np.linspace(self.a, self.b, self.interior_knot_count + 2)[1:-1]
        knots = np.concatenate([
            np.full(self.degree + 1, self.a),
            interior,
            np.full(self.degree + 1, self.b),
        ])
        object.__setattr__(self, "knots", knots)

    @property
    def K(self):
        """Number of basis functions."""
        return self.interior_knot_count + self.degree + 1

    @classmethod
    def with_dimension(cls, K, a=0.0, b=1.0, degree=3):
        """Basis with exactly K functions (interior knots derived)."""
        if K < degree + 1:
            raise InvalidRange(f"need at least degree+1={degree + 1} basis functions, got {K}")
        return cls(degree=degree, interior_knot_count=K - degree - 1, a=a, b=b)

    def greville(self):
        """Greville abscissae (knot averages); spline with these coefficients is the identity."""
        d = self.degree
        return np.array([self.knots[i + 1:i + 1 + d].mean() for i in range(self.K)])


def _clip_to_domain(basis, t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise NonFiniteInput("evaluation points contain non-finite values")
    lo, hi = basis.a, basis.b
    bad = (t < lo - _ENDPOINT_SLACK) | (t > hi + _ENDPOINT_SLACK)
    if np.any(bad):
        raise OutOfDomain(float(t[bad][0]), lo, hi)
    return np.clip(t, lo, hi)


def design_matrix(basis, t):
    """Dense design matrix of basis values; rows sum to 1 (partition of unity)."""
    t = _clip_to_domain(basis, t)
    return BSpline.design_matrix(t, basis.knots, basis.degree).toarray()


def spline_value(basis, coeffs, t):
    """Evaluate the spline sum_k coeffs[k] * B_k(t)."""
    t = _clip_to_domain(basis, t)
    return BSpline(basis.knots, np.asarray(coeffs, dtype=float), basis.degree)(t)


def spline_derivative(basis, coeffs, t):
    """First derivative of the spline at t."""
    t = _clip_to_domain(basis, t)
    return BSpline(basis.knots, np.asarray(coeffs, dtype=float), basis.degree).derivative()(t)


_MONOTONE_TOL = 1e-10


@dataclass(frozen=True)
class WarpingFunction:
    """Monotone spline from a curve's observed (chronological) interval into [0, 1].

    Monotonicity is carried by nondecreasing coefficients; the endpoint values
    are beta[0] and beta[-1] because the basis is clamped.
    """

    basis: BsplineBasis
    beta: np.ndarray
    mode: object = None  # IncompletenessMode; kept loose to avoid an import cycle

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "beta", beta)
        if beta.shape != (self.basis.K,):
            raise InvalidRange(f"beta has length {beta.size}, basis has K={self.basis.K}")
        if not np.all(np.isfinite(beta)):
            raise NonFiniteInput("warping coefficients contain non-finite values")
        if np.any(np.diff(beta) < -_MONOTONE_TOL):
            raise InvalidRange("warping coefficients must be nondecreasing")
        if beta[0] < -_MONOTONE_TOL or beta[-1] > 1.0 + _MONOTONE_TOL:
            raise InvalidRange("warping range must stay inside [0, 1]")

    @property
    def observed_interval(self):
        return self.basis.a, self.basis.b

    @property
    def registered_interval(self):
        """Image of the observed interval under the warp."""
        return float(self.beta[0]), float(self.beta[-1])


def eval_warp(w, t):
    """Internal times h^{-1}(t) for chronological times t."""
    return design_matrix(w.basis, t) @ w.beta


def greville_identity_beta(basis, lo, hi):
    """Coefficients making the spline an affine map of [a, b] onto [lo, hi]."""
    if not (lo < hi):
        raise InvalidRange(f"need lo < hi, got [{lo}, {hi}]")
    g = basis.greville()
    return lo + (g - basis.a) / (basis.b - basis.a) * (hi - lo)


def difference_matrix(K, order):
    """Order-d difference matrix D_d of shape (K - d, K)."""
    D = np.eye(K)
    for _ in range(order):
        D = np.diff(D, axis=0)
    return D


def penalty_matrix(basis, order):
    """Divided-difference matrix of the given order at the Greville abscissae.

    On a clamped knot vector the boundary Greville points are unequally
    spaced, so plain coefficient differences would penalize affine splines.
    Divided differences annihilate every spline polynomial of degree < order
    exactly, at any smoothing level.
    """
    xi = basis.greville()
    D = np.eye(basis.K)
    scale = 1.0
    h = float(np.mean(np.diff(xi)))
    for j in range(1, order + 1):
        rows = basis.K - j
        L = np.zeros((rows, rows + 1))
        for i in range(rows):
            span = xi[i + j] - xi[i]
            L[i, i] = -1.0 / span
            L[i, i + 1] = 1.0 / span
        D = L @ D
        scale *= j * h  # restores plain-difference scale on the uniform interior
    return scale * D


def penalized_spline_fit(t, y, weights, basis, penalty_order=2, smooth_par=AUTO):
    """Weighted penalized least-squares spline fit.

    Minimizes sum_i w_i (y_i - f(t_i))^2 + smooth_par * ||D_d theta||^2 over
    coefficients theta. ``smooth_par=AUTO`` picks the value from GCV_GRID with
    the smallest generalized cross-validation score.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    if not (t.shape == y.shape == w.shape):
        raise InvalidRange("t, y, weights must have equal length")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise NonFiniteInput("non-finite response or weight")
    if np.any(w < 0):
        raise InvalidRange("weights must be nonnegative")
    if t.size < basis.K - penalty_order:
        raise SingularSystem(f"{t.size} points cannot identify {basis.K} coefficients "
                             f"with an order-{penalty_order} penalty")

    B = design_matrix(basis, t)
    Bw = B * w[:, None]
    BtWB = B.T @ Bw
    BtWy = Bw.T @ y
    D = penalty_matrix(basis, penalty_order)
    P = D.T @ D

    def solve(lam):
        try:
            return np.linalg.solve(BtWB + lam * P, BtWy)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("normal equations singular; too few distinct t") from exc

    if not isinstance(smooth_par, str):
        if not np.isfinite(smooth_par) or smooth_par < 0:
            raise InvalidRange("smooth_par must be a finite nonnegative scalar")
        return solve(float(smooth_par))
    if smooth_par != AUTO:
        raise InvalidRange(f"unknown smooth_par {smooth_par!r}")

    n = t.size
    best = (np.inf, None)
    for lam in GCV_GRID:
        theta = solve(lam)
        resid = y - B @ theta
        wrss = float(w @ resid**2)
        edf = float(np.trace(np.linalg.solve(BtWB + lam * P, BtWB)))
        denom = max(n - edf, 1e-10)
        gcv = n * wrss / denom**2
        if gcv < best[0]:
            best = (gcv, theta)
    return best[1]
