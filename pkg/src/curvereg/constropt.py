"""Maximization under linear inequality constraints u @ beta - c >= 0.

The feasible region for warping coefficients is a polyhedron built from
monotonicity differences plus domain bounds. Maximization runs a logarithmic
barrier outer loop with a BFGS inner loop; every iterate stays strictly
feasible, so feasibility is never traded for objective value.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleStart, InvalidDomain, NonFiniteObjective
from .funcdata import IncompletenessMode


@dataclass(frozen=True)
class ConstraintSet:
    """Linear system u @ beta_free - c >= 0 plus the pinned coefficients.

    ``u`` always carries the bidiagonal pattern: the first row selects the
    first free coefficient, interior rows are successive differences, and the
    last row is the negated last free coefficient. Modes differ only in the
    bound vector ``c`` and in which coefficients are pinned.
    """

    u: np.ndarray
    c: np.ndarray
    p: int
    free_index: np.ndarray
    pinned: dict = field(default_factory=dict)

    @property
    def n_free(self):
        return self.free_index.size

    def slacks(self, beta_free):
        return self.u @ beta_free - self.c

    def is_strictly_feasible(self, beta_free, margin=1e-8):
        return bool(np.min(self.slacks(beta_free)) >= margin)

    def assemble(self, beta_free):
        """Full coefficient vector with pinned entries filled in."""
        beta = np.empty(self.p)
        beta[self.free_index] = beta_free
        for idx, val in self.pinned.items():
            beta[idx] = val
        return beta

    def extract_free(self, beta_full):
        return np.asarray(beta_full, dtype=float)[self.free_index]


def _bidiagonal(n_free):
    u = np.zeros((n_free + 1, n_free))
    u[0, 0] = 1.0
    for i in range(1, n_free):
        u[i, i - 1] = -1.0
        u[i, i] = 1.0
    u[n_free, n_free - 1] = -1.0
    return u


def build_constraints(mode, p, t_star_min, t_star_max, t_min=0.0, t_max=1.0):
    """Constraint system for one curve's warping coefficients.

    Shapes by mode for a length-p coefficient vector:
    complete (p-1) x (p-2), leading p x (p-1), trailing p x (p-1),
    full (p+1) x p.
    """
    if p < 3:
        raise InvalidDomain(f"need p >= 3 warping coefficients, got {p}")
    if not (t_min <= t_star_min < t_star_max <= t_max):
        raise InvalidDomain(
            f"observed interval [{t_star_min}, {t_star_max}] invalid inside [{t_min}, {t_max}]")

    if mode is IncompletenessMode.COMPLETE:
        free = np.arange(1, p - 1)
        pinned = {0: t_star_min, p - 1: t_star_max}
        lo, hi = t_star_min, t_star_max
    elif mode is IncompletenessMode.LEADING:
        free = np.arange(0, p - 1)
        pinned = {p - 1: t_star_max}
        lo, hi = t_min, t_star_max
    elif mode is IncompletenessMode.TRAILING:
        free = np.arange(1, p)
        pinned = {0: t_star_min}
        lo, hi = t_star_min, t_max
    elif mode is IncompletenessMode.FULL:
        free = np.arange(0, p)
        pinned = {}
        lo, hi = t_min, t_max
    else:
        raise InvalidDomain(f"unknown mode {mode!r}")

    u = _bidiagonal(free.size)
    c = np.zeros(free.size + 1)
    c[0] = lo
    c[-1] = -hi
    return ConstraintSet(u=u, c=c, p=p, free_index=free, pinned=pinned)


@dataclass
class OptimOptions:
    tol_obj: float = 1e-8
    mu_min: float = 1e-8
    mu0: float = 1e-2
    mu_factor: float = 0.1
    max_outer: int = 40
    max_inner: int = 200
    armijo_c: float = 1e-4
    feas_margin: float = 1e-8


@dataclass
class MaximizeResult:
    beta: np.ndarray
    value: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)  # best objective after each outer iteration


def _repair_start(beta0, constraints, anchor, margin):
    """Shrink an infeasible start toward a strictly feasible anchor point."""
    if anchor is None:
        raise InfeasibleStart("start violates constraints and no repair anchor was given")
    for s in (0.9, 0.5, 0.1):
        candidate = s * beta0 + (1.0 - s) * anchor
        if constraints.is_strictly_feasible(candidate, margin):
            return candidate
    if constraints.is_strictly_feasible(anchor, margin):
        return anchor.copy()
    raise InfeasibleStart("could not repair infeasible start")


def _bfgs_max(fgrad, x0, max_iter, armijo_c, gtol, ftol):
    """BFGS ascent with halving Armijo backtracking; fgrad returns (value, grad).

    Points where fgrad returns -inf are treated as outside the domain and
    rejected by the line search.
    """
    x = x0.copy()
    f, g = fgrad(x)
    H = np.eye(x.size)
    for _ in range(max_iter):
        if np.max(np.abs(g)) < gtol:
            break
        d = H @ g
        if d @ g <= 0:  # stale curvature estimate
            H = np.eye(x.size)
            d = g.copy()
        step = 1.0
        gd = g @ d
        accepted = False
        while step >= 1e-14:
            x_new = x + step * d
            f_new, g_new = fgrad(x_new)
            if np.isfinite(f_new) and f_new >= f + armijo_c * step * gd:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        s = x_new - x
        yk = g_new - g
        sy = s @ yk
        if sy < -1e-12 * np.linalg.norm(s) * np.linalg.norm(yk):
            rho = 1.0 / sy
            I = np.eye(x.size)
            V = I - rho * np.outer(s, yk)
            H = V @ H @ V.T + (-rho) * np.outer(s, s)
        if abs(f_new - f) < ftol * (1.0 + abs(f)):
            x, f, g = x_new, f_new, g_new
            break
        x, f, g = x_new, f_new, g_new
    return x, f, g


def maximize(objective, constraints, beta0, opts=None, repair_anchor=None):
    """Barrier maximization of ``objective`` (value, gradient) over the free coefficients.

    Returns the best strictly feasible iterate; ``converged`` is true once the
    outer objective change drops below ``opts.tol_obj`` with the barrier weight
    below ``opts.mu_min``. Hitting the outer iteration cap returns the best
    iterate with ``converged=False`` instead of raising.
    """
    opts = opts or OptimOptions()
    beta0 = np.asarray(beta0, dtype=float).copy()
    if not constraints.is_strictly_feasible(beta0, opts.feas_margin):
        beta0 = _repair_start(beta0, constraints, repair_anchor, opts.feas_margin)

    f0, _ = objective(beta0)
    if not np.isfinite(f0):
        raise NonFiniteObjective("objective not finite at the starting point")

    u, c = constraints.u, constraints.c

    def barrier_fgrad(mu):
        def fg(x):
            slack = u @ x - c
            if np.any(slack <= 0):
                return -np.inf, np.zeros_like(x)
            f, g = objective(x)
            if not np.isfinite(f):
                return -np.inf, np.zeros_like(x)
            return f + mu * np.sum(np.log(slack)), g + mu * (u.T @ (1.0 / slack))
        return fg

    best_beta, best_f = beta0, f0
    x = beta0
    f_prev_outer = f0
    mu = opts.mu0
    converged = False
    outer = 0
    trace = []
    for outer in range(1, opts.max_outer + 1):
        x, _, _ = _bfgs_max(barrier_fgrad(mu), x,
                            max_iter=opts.max_inner, armijo_c=opts.armijo_c,
                            gtol=1e-10, ftol=1e-12)
        f_x, _ = objective(x)
        if f_x > best_f:
            best_beta, best_f = x.copy(), f_x
        trace.append(best_f)
        if abs(f_x - f_prev_outer) < opts.tol_obj and mu < opts.mu_min:
            converged = True
            break
        f_prev_outer = f_x
        mu *= opts.mu_factor

    return MaximizeResult(beta=best_beta, value=best_f, iterations=outer,
                          converged=converged, trace=trace)
