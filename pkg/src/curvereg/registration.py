"""Penalized likelihood registration of curves to template functions.

Each curve gets one inverse warping function, estimated by maximizing its
exponential-family log-likelihood against a template, minus a penalty on how
much the registration changes the observed duration. The penalty weight is
scaled by the number of measurements so its influence does not depend on
sampling density.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bspline
from .bspline import BsplineBasis, WarpingFunction, design_matrix, greville_identity_beta
from .constropt import OptimOptions, build_constraints, maximize
from .errors import InvalidRange, NonFinite
from .expfam import moment_gamma_shape
from .funcdata import IncompletenessMode

_FLAT_TEMPLATE_TOL = 1e-8


@dataclass(frozen=True)
class TemplateFunction:
    """Latent-scale spline target on [0, 1]; the mean is g(spline(t))."""

    basis: BsplineBasis
    coeffs: np.ndarray
    family: object

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        object.__setattr__(self, "coeffs", coeffs)
        if coeffs.shape != (self.basis.K,):
            raise InvalidRange("template coefficient length must match basis dimension")
        if not np.all(np.isfinite(coeffs)):
            raise NonFinite("template coefficients must be finite")

    def latent(self, t):
        return bspline.spline_value(self.basis, self.coeffs, t)

    def latent_deriv(self, t):
        return bspline.spline_derivative(self.basis, self.coeffs, t)

    def mean(self, t):
        return self.family.g(self.latent(t))

    def mean_deriv(self, t):
        x = self.latent(t)
        return self.family.g_prime(x) * self.latent_deriv(t)

    @classmethod
    def from_grid(cls, grid, latent_values, family, n_basis=8):
        """Least-squares spline representation of latent values on a grid."""
        basis = BsplineBasis.with_dimension(n_basis)
        B = design_matrix(basis, grid)
        coeffs, *_ = np.linalg.lstsq(B, np.asarray(latent_values, dtype=float), rcond=None)
        return cls(basis, coeffs, family)


@dataclass
class RegistrationConfig:
    family: object
    lam: float = 0.025
    K_h: int = 4
    mode: IncompletenessMode = IncompletenessMode.COMPLETE
    workers: int = 1
    optim: OptimOptions = field(default_factory=OptimOptions)

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise InvalidRange("lambda must be finite and >= 0")
        if self.K_h < 3:
            raise InvalidRange("warping basis needs K_h >= 3")


@dataclass
class RegistrationResult:
    id: str
    warping: object
    penalized_loglik: float
    loglik: float
    penalty: float
    converged: bool
    error: str = None

    @property
    def ok(self):
        return self.error is None


def penalty(w):
    """Squared change of the observed duration under the warp (mode-specific)."""
    a, b = w.observed_interval
    lo, hi = w.registered_interval
    mode = w.mode
    if mode is IncompletenessMode.COMPLETE:
        return 0.0
    if mode is IncompletenessMode.LEADING:
        return (lo - a) ** 2
    if mode is IncompletenessMode.TRAILING:
        return (hi - b) ** 2
    return ((hi - lo) - (b - a)) ** 2


def _penalty_and_grad(beta, mode, a, b):
    """Penalty value and gradient with respect to the full coefficient vector."""
    g = np.zeros_like(beta)
    if mode is IncompletenessMode.COMPLETE:
        return 0.0, g
    if mode is IncompletenessMode.LEADING:
        d = beta[0] - a
        g[0] = 2.0 * d
        return d * d, g
    if mode is IncompletenessMode.TRAILING:
        d = beta[-1] - b
        g[-1] = 2.0 * d
        return d * d, g
    d = (beta[-1] - beta[0]) - (b - a)
    g[0] = -2.0 * d
    g[-1] = 2.0 * d
    return d * d, g


def feasible_identity_beta(basis, mode, margin=1e-6):
    """Identity-like start that is strictly feasible for the mode's constraints.

    Unpinned endpoints are pulled inside the global domain by ``margin`` so the
    log-barrier is finite at the start.
    """
    lo, hi = basis.a, basis.b
    if not mode.pins_start:
        lo = max(lo, margin)
    if not mode.pins_end:
        hi = min(hi, 1.0 - margin)
    if not lo < hi:
        raise InvalidRange("observed interval too small for a feasible start")
    return greville_identity_beta(basis, lo, hi)


def make_objective(curve, template, cfg, constraints, theta_h):
    """Penalized log-likelihood and gradient over the free warping coefficients."""
    y = curve.values
    lam_n = cfg.lam * curve.n
    fam = cfg.family
    mode = cfg.mode
    a, b = curve.t_min, curve.t_max

    def fgrad(beta_free):
        beta = constraints.assemble(beta_free)
        hinv = theta_h @ beta
        eta = template.latent(hinv)
        ll = fam.loglik(y, eta)
        pen, pen_grad = _penalty_and_grad(beta, mode, a, b)
        score = fam.score(y, eta) * template.latent_deriv(hinv)
        grad = theta_h.T @ score - lam_n * pen_grad
        return ll - lam_n * pen, grad[constraints.free_index]

    return fgrad


def register_curve(curve, template, cfg, warm_start=None):
    """Estimate one curve's inverse warping function.

    A template whose mean derivative vanishes over the warped range carries no
    registration signal; the identity warp is returned with an error note
    instead of optimizing.
    """
    cfg.family.validate_y(curve.values)
    basis = BsplineBasis.with_dimension(cfg.K_h, a=curve.t_min, b=curve.t_max)
    constraints = build_constraints(cfg.mode, cfg.K_h, curve.t_min, curve.t_max)
    theta_h = design_matrix(basis, curve.times)

    identity_beta = feasible_identity_beta(basis, cfg.mode)
    start = warm_start.beta.copy() if warm_start is not None else identity_beta

    probe = np.linspace(identity_beta[0], identity_beta[-1], 200)
    if np.max(np.abs(template.mean_deriv(probe))) < _FLAT_TEMPLATE_TOL:
        w = WarpingFunction(basis, identity_beta, cfg.mode)
        ll = cfg.family.loglik(curve.values, template.latent(theta_h @ identity_beta))
        pen = penalty(w)
        return RegistrationResult(curve.id, w, ll - cfg.lam * curve.n * pen, ll, pen,
                                  converged=True,
                                  error="DegenerateTemplate: flat template over warped range")

    fgrad = make_objective(curve, template, cfg, constraints, theta_h)
    res = maximize(fgrad, constraints, constraints.extract_free(start),
                   opts=cfg.optim, repair_anchor=constraints.extract_free(identity_beta))
    beta = constraints.assemble(res.beta)
    w = WarpingFunction(basis, beta, cfg.mode)
    pen = penalty(w)
    return RegistrationResult(curve.id, w, res.value, res.value + cfg.lam * curve.n * pen,
                              pen, res.converged)


def _register_one(args):
    curve, template, cfg, warm = args
    try:
        return register_curve(curve, template, cfg, warm)
    except Exception as exc:  # per-curve failures are collected, not fatal
        return RegistrationResult(curve.id, None, np.nan, np.nan, np.nan,
                                  converged=False, error=f"{type(exc).__name__}: {exc}")


def register_all(dataset, templates, cfg, warm_starts=None):
    """Register every curve; order-preserving and deterministic for any worker count."""
    curves = dataset.curves
    if isinstance(templates, TemplateFunction):
        templates = [templates] * len(curves)
    if len(templates) == 1:
        templates = list(templates) * len(curves)
    if len(templates) != len(curves):
        raise InvalidRange("need one template, or one per curve")
    if warm_starts is None:
        warm_starts = [None] * len(curves)
    if len(warm_starts) != len(curves):
        raise InvalidRange("warm starts must match curve count")

    tasks = list(zip(curves, templates, [cfg] * len(curves), warm_starts))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_register_one, tasks, chunksize=8))
    else:
        results = [_register_one(t) for t in tasks]
    return results


def failed_ids(results):
    return [r.id for r in results if not r.ok]


def resolve_dispersion(family, dataset, template):
    """Fill in a missing dispersion from residuals against the template at identity warp.

    Gaussian: mean squared residual. Gamma: method-of-moments shape from
    Pearson residuals. The value is then held fixed during optimization so the
    penalty keeps a stable meaning across iterations.
    """
    if not family.has_dispersion or family.dispersion is not None:
        return family
    t, y = dataset.pooled()
    mu = family.g(template.latent(t))
    if family.name == "gaussian":
        return family.with_dispersion(float(np.mean((y - mu) ** 2)))
    if family.name == "gamma":
        return family.with_dispersion(float(moment_gamma_shape(y, mu)))
    raise InvalidRange(f"no dispersion rule for family {family.name!r}")


def registered_dataset(dataset, results):
    """Dataset with times replaced by each curve's registered internal times."""
    from .funcdata import Curve, FunctionalDataset

    curves = []
    for c, r in zip(dataset.curves, results):
        if r.warping is None:
            continue
        t_int = np.maximum.accumulate(np.clip(bspline.eval_warp(r.warping, c.times), 0.0, 1.0))
        for j in range(1, t_int.size):  # ULP nudge: curves need strictly increasing times
            if t_int[j] <= t_int[j - 1]:
                t_int[j] = np.nextafter(t_int[j - 1], np.inf)
        curves.append(Curve(c.id, t_int, c.values))
    return FunctionalDataset(tuple(curves), dataset.mode, dataset.raw_domain)
