"""Exponential families: densities, response functions and IRLS ingredients.

Each family links a latent value eta to the observation mean through its
response function g. Log-likelihoods include all constants (full densities),
so penalized objective values are comparable across families in reports.
"""

import numpy as np
from scipy.special import expit, gammaln

from .errors import DegenerateWeight, InvalidObservation, InvalidRange, NonFinite

_GPRIME_FLOOR = 1e-12


class Family:
    """Base class; subclasses define the response scale and density."""

    name = None
    has_dispersion = True

    def __init__(self, dispersion=None):
        self.dispersion = dispersion

    def with_dispersion(self, value):
        return type(self)(value)

    @property
    def dispersion_resolved(self):
        if self.has_dispersion and self.dispersion is None:
            raise InvalidRange(f"{self.name} dispersion not set; estimate or supply one")
        return self.dispersion

    # subclasses: g, g_prime, variance, loglik, score, hessian_diag,
    # validate_y, sample

    def irls(self, y, eta):
        """Working response z and weights w for one IRLS step."""
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        gp = self.g_prime(eta)
        if np.any(np.abs(gp) < _GPRIME_FLOOR):
            raise DegenerateWeight(f"g'(eta) underflow in {self.name} family")
        z = eta + (y - self.g(eta)) / gp
        w = gp**2 / self.variance(eta)
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(w))):
            raise NonFinite("non-finite IRLS working quantities")
        return z, w

    def __repr__(self):
        return f"{type(self).__name__}(dispersion={self.dispersion!r})"


class Gaussian(Family):
    name = "gaussian"

    def g(self, x):
        return np.asarray(x, dtype=float)

    def g_prime(self, x):
        return np.ones_like(np.asarray(x, dtype=float))

    def variance(self, eta):
        return np.full_like(np.asarray(eta, dtype=float), self.dispersion_resolved)

    def validate_y(self, y):
        if not np.all(np.isfinite(y)):
            raise InvalidObservation("gaussian observations must be finite")

    def loglik(self, y, eta):
        s2 = self.dispersion_resolved
        r = np.asarray(y, float) - np.asarray(eta, float)
        return float(np.sum(-0.5 * np.log(2.0 * np.pi * s2) - r**2 / (2.0 * s2)))

    def score(self, y, eta):
        return (np.asarray(y, float) - np.asarray(eta, float)) / self.dispersion_resolved

    def hessian_diag(self, y, eta):
        return np.full_like(np.asarray(eta, dtype=float), -1.0 / self.dispersion_resolved)

    def sample(self, rng, eta):
        return rng.normal(self.g(eta), np.sqrt(self.dispersion_resolved))


class Gamma(Family):
    """Gamma with log link in mean parameterization: E[Y]=exp(eta), Var=exp(2 eta)/nu."""

    name = "gamma"

    def g(self, x):
        return np.exp(np.asarray(x, dtype=float))

    def g_prime(self, x):
        return np.exp(np.asarray(x, dtype=float))

    def variance(self, eta):
        return np.exp(2.0 * np.asarray(eta, dtype=float)) / self.dispersion_resolved

    def validate_y(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)) or np.any(y <= 0):
            raise InvalidObservation("gamma observations must be finite and > 0")

    def loglik(self, y, eta):
        nu = self.dispersion_resolved
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        self.validate_y(y)
        terms = (nu * np.log(nu) - gammaln(nu) + (nu - 1.0) * np.log(y)
                 - nu * eta - nu * y * np.exp(-eta))
        return float(np.sum(terms))

    def score(self, y, eta):
        nu = self.dispersion_resolved
        return nu * (np.asarray(y, float) * np.exp(-np.asarray(eta, float)) - 1.0)

    def hessian_diag(self, y, eta):
        nu = self.dispersion_resolved
        return -nu * np.asarray(y, float) * np.exp(-np.asarray(eta, float))

    def sample(self, rng, eta):
        nu = self.dispersion_resolved
        return rng.gamma(shape=nu, scale=np.exp(np.asarray(eta, float)) / nu)


class Binomial(Family):
    name = "binomial"
    has_dispersion = False

    def __init__(self, dispersion=None):
        super().__init__(None)

    def g(self, x):
        return expit(np.asarray(x, dtype=float))

    def g_prime(self, x):
        p = expit(np.asarray(x, dtype=float))
        return p * (1.0 - p)

    def variance(self, eta):
        return self.g_prime(eta)

    def validate_y(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise InvalidObservation("binomial observations must be 0 or 1")

    def loglik(self, y, eta):
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        self.validate_y(y)
        # y*eta - log(1 + exp(eta)), computed stably
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    def score(self, y, eta):
        return np.asarray(y, float) - expit(np.asarray(eta, float))

    def hessian_diag(self, y, eta):
        return -self.g_prime(eta)

    def sample(self, rng, eta):
        return rng.binomial(1, self.g(eta)).astype(float)


_FAMILIES = {cls.name: cls for cls in (Gaussian, Gamma, Binomial)}


def make_family(name, dispersion=None):
    """Family instance from its lowercase name."""
    try:
        cls = _FAMILIES[name.lower()]
    except KeyError:
        raise InvalidRange(f"unknown family {name!r}; expected one of {sorted(_FAMILIES)}")
    return cls(dispersion)


def loglik(fam, y, eta):
    """Sum of log densities of y at latent values eta."""
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if y.shape != eta.shape:
        raise InvalidRange("y and eta must have equal length")
    if not np.all(np.isfinite(eta)):
        raise NonFinite("non-finite latent values")
    value = fam.loglik(y, eta)
    if not np.isfinite(value):
        raise NonFinite("log-likelihood is not finite")
    return value


def loglik_grad_eta(fam, y, eta):
    """Elementwise derivative of the log density with respect to eta."""
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if y.shape != eta.shape:
        raise InvalidRange("y and eta must have equal length")
    fam.validate_y(y)
    return fam.score(y, eta)


def irls_weights(fam, y, eta):
    """Working response and weights: z = eta + (y-g)/g', w = g'^2 / Var."""
    fam.validate_y(np.asarray(y, dtype=float))
    return fam.irls(y, eta)


def moment_gamma_shape(y, mu):
    """Method-of-moments Gamma shape from Pearson residuals against mean mu."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    pearson = np.mean(((y - mu) / mu) ** 2)
    if pearson <= 0:
        raise InvalidRange("cannot estimate a Gamma shape from constant data")
    return 1.0 / pearson
