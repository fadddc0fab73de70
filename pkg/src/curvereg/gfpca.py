"""Two-step generalized FPCA of curves on a shared internal time domain.

Pipeline: marginal mean smoothing (penalized IRLS), mean-centering, binned
crossproduct covariance, diagonal-excluded tensor P-spline smoothing, transform
to the latent scale, quadrature-weighted eigendecomposition, FPC-count
selection, and per-curve MAP score estimation with mean backfitting.
"""

from dataclasses import dataclass, field

import numpy as np

from . import bspline
from .bspline import AUTO, BsplineBasis, design_matrix, penalty_matrix
from .errors import (DerivativeUnderflow, EmptyDataset, InsufficientOverlap, InvalidRange,
                     IrlsDiverged, NewtonDiverged, NotSymmetric, SingularSystem)

_DERIV_FLOOR = 1e-8


# --------------------------------------------------------------------------
# marginal mean


@dataclass(frozen=True)
class MarginalMean:
    """Latent-scale mean spline; the response-scale mean is g(mu_X(t)) by construction."""

    basis: BsplineBasis
    coeffs: np.ndarray
    family: object

    def latent(self, t):
        return bspline.spline_value(self.basis, self.coeffs, t)

    mu_X = latent

    def mu_Y(self, t):
        return self.family.g(self.latent(t))


def _initial_eta(family, y):
    y = np.asarray(y, dtype=float)
    if family.name == "gaussian":
        return y.copy()
    if family.name == "gamma":
        return np.log(y)
    # binomial: shrink 0/1 toward 1/2 before the logit
    p = (y + 0.5) / 2.0
    return np.log(p / (1.0 - p))


def irls_spline_fit(t, y, family, basis, offset=None, penalty_order=2,
                    smooth_par=AUTO, max_iter=25, tol=1e-8):
    """Penalized IRLS spline fit of a family mean on the latent scale.

    Returns the coefficient vector of the latent spline. ``offset`` is a known
    additive latent component (used when backfitting the mean around FPC
    scores).
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    offset = np.zeros_like(t) if offset is None else np.asarray(offset, dtype=float)
    family.validate_y(y)

    eta = _initial_eta(family, y)
    theta = None
    ll = -np.inf
    for _ in range(max_iter):
        z, w = family.irls(y, eta)
        theta_new = bspline.penalized_spline_fit(t, z - offset, w, basis,
                                                 penalty_order, smooth_par)
        eta_new = design_matrix(basis, t) @ theta_new + offset
        ll_new = family.loglik(y, eta_new)
        # GCV re-selection between iterations makes the plain loglik only
        # approximately monotone; halve genuinely bad steps, accept plateaus
        slack = 1e-8 * (1.0 + abs(ll))
        plateau = False
        halvings = 0
        while ll_new < ll - slack and theta is not None:
            if halvings >= 10:
                raise IrlsDiverged("step halving exhausted in IRLS spline fit")
            theta_new = 0.5 * (theta_new + theta)
            eta_new = design_matrix(basis, t) @ theta_new + offset
            ll_new = family.loglik(y, eta_new)
            halvings += 1
        if halvings > 0 and abs(ll_new - ll) <= slack:
            plateau = True
        done = theta is not None and np.max(np.abs(theta_new - theta)) < tol * (
            1.0 + np.max(np.abs(theta_new)))
        theta, eta, ll = theta_new, eta_new, ll_new
        if done or plateau:
            break
    return theta


def estimate_marginal_mean(dataset, family, n_basis=8, max_iter=25):
    """Smooth all pooled (t, y) pairs into the marginal mean of the process."""
    t, y = dataset.pooled()
    if np.unique(t).size < n_basis:
        raise SingularSystem(f"need at least {n_basis} distinct pooled times")
    basis = BsplineBasis.with_dimension(n_basis)
    coeffs = irls_spline_fit(t, y, family, basis, max_iter=max_iter)
    return MarginalMean(basis, coeffs, family)


def center_curves(dataset, mean):
    """Subtract the response-scale marginal mean at each observed time."""
    return dataset.with_values([c.values - mean.mu_Y(c.times) for c in dataset])


# --------------------------------------------------------------------------
# covariance


@dataclass
class CovarianceEstimate:
    """Binned raw crossproduct surface and its smoothed version."""

    grid: np.ndarray
    raw: np.ndarray
    counts: np.ndarray
    digits: int
    smoothed: np.ndarray = None
    smoother_basis: BsplineBasis = None
    smoother_coef: np.ndarray = None
    smooth_par: float = None

    def evaluate_smoothed(self, grid):
        """Smoothed surface on an arbitrary grid, symmetrized."""
        if self.smoother_coef is None:
            raise InvalidRange("covariance has not been smoothed yet")
        B = design_matrix(self.smoother_basis, grid)
        S = B @ self.smoother_coef @ B.T
        return 0.5 * (S + S.T)


def assemble_crossproducts(centered, digits=3):
    """Cell means of within-curve pairwise products on a time grid rounded to ``digits``.

    Every ordered pair (j, k) of a curve's samples, including j = k,
    contributes y_c(t_j) * y_c(t_k) to the cell of its rounded times, so the
    raw matrix is symmetric by construction.
    """
    if digits not in range(1, 7):
        raise InvalidRange("digits must be in 1..6")
    if not len(centered):
        raise EmptyDataset("no curves to assemble")
    rounded = [np.round(c.times, digits) for c in centered]
    grid = np.unique(np.concatenate(rounded))
    m = grid.size
    sums = np.zeros((m, m))
    counts = np.zeros((m, m), dtype=np.int64)
    for r, c in zip(rounded, centered):
        idx = np.searchsorted(grid, r)
        np.add.at(sums, (idx[:, None], idx[None, :]), np.outer(c.values, c.values))
        np.add.at(counts, (idx[:, None], idx[None, :]), 1)
    with np.errstate(invalid="ignore"):
        raw = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return CovarianceEstimate(grid=grid, raw=raw, counts=counts, digits=digits)


def smooth_covariance(cov, marginal_basis=10):
    """Tensor-product P-spline fit to populated off-diagonal cells.

    The diagonal is excluded from the fit (it carries the noise nugget) but is
    predicted on output. A single GCV-selected smoothing parameter is shared by
    both directions.
    """
    m = cov.grid.size
    offdiag = ~np.eye(m, dtype=bool)
    mask = (cov.counts > 0) & offdiag
    n_cells = int(mask.sum())
    if n_cells < marginal_basis**2:
        raise InsufficientOverlap(
            f"only {n_cells} populated off-diagonal cells; need >= {marginal_basis**2}")

    basis = BsplineBasis.with_dimension(marginal_basis)
    theta = design_matrix(basis, cov.grid)
    I, J = np.nonzero(mask)
    w = cov.counts[I, J].astype(float)
    y = cov.raw[I, J]
    K = basis.K

    A = np.zeros((K * K, K * K))
    b = np.zeros(K * K)
    ywy = 0.0
    chunk = 20000
    for s in range(0, n_cells, chunk):
        sl = slice(s, s + chunk)
        R = np.einsum("ca,cb->cab", theta[I[sl]], theta[J[sl]]).reshape(-1, K * K)
        Rw = R * w[sl, None]
        A += R.T @ Rw
        b += Rw.T @ y[sl]
        ywy += float(w[sl] @ y[sl] ** 2)

    D = penalty_matrix(basis, 2)
    P1 = D.T @ D
    eye = np.eye(K)
    P = np.kron(P1, eye) + np.kron(eye, P1)

    best = (np.inf, None, None)
    for lam in bspline.GCV_GRID:
        M = A + lam * P
        try:
            coef = np.linalg.solve(M, b)
            edf = float(np.trace(np.linalg.solve(M, A)))
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("covariance smoothing system is singular") from exc
        rss = ywy - 2.0 * coef @ b + coef @ A @ coef
        denom = max(n_cells - edf, 1e-10)
        gcv = n_cells * rss / denom**2
        if gcv < best[0]:
            best = (gcv, coef, lam)

    cov.smoother_basis = basis
    cov.smoother_coef = best[1].reshape(K, K)
    cov.smooth_par = float(best[2])
    cov.smoothed = cov.evaluate_smoothed(cov.grid)
    return cov


def latent_covariance(cov, mean, family, grid=None):
    """Smoothed response-scale covariance divided by g'(mu_X) in both arguments."""
    grid = cov.grid if grid is None else np.asarray(grid, dtype=float)
    S = cov.evaluate_smoothed(grid)
    d = family.g_prime(mean.mu_X(grid))
    small = np.abs(d) < _DERIV_FLOOR
    if np.any(small):
        raise DerivativeUnderflow(float(grid[small][0]))
    return S / np.outer(d, d)


# --------------------------------------------------------------------------
# eigenstructure


def trapezoid_weights(grid):
    grid = np.asarray(grid, dtype=float)
    w = np.empty_like(grid)
    w[0] = (grid[1] - grid[0]) / 2.0
    w[-1] = (grid[-1] - grid[-2]) / 2.0
    w[1:-1] = (grid[2:] - grid[:-2]) / 2.0
    return w


def eigendecompose(C, grid):
    """Quadrature-orthonormal eigenfunctions and eigenvalues of a covariance surface.

    Solves the weighted problem W^(1/2) C W^(1/2) u = tau u with trapezoid
    weights, so psi = u / sqrt(w) satisfies psi^T W psi = I exactly and tau
    approximates the continuous eigenvalues. Nonpositive eigenvalues are
    dropped; each eigenfunction is flipped so its largest-magnitude entry is
    positive.
    """
    C = np.asarray(C, dtype=float)
    if C.shape[0] != C.shape[1] or not np.allclose(C, C.T, rtol=0.0, atol=1e-8):
        raise NotSymmetric("covariance matrix must be symmetric")
    w = trapezoid_weights(grid)
    sw = np.sqrt(w)
    B = sw[:, None] * C * sw[None, :]
    B = 0.5 * (B + B.T)
    vals, vecs = np.linalg.eigh(B)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    # strictly positive spectrum; a relative floor keeps eigh round-off out
    floor = max(vals[0], 0.0) * 1e-12
    keep = vals > floor
    vals, vecs = vals[keep], vecs[:, keep]
    psi = vecs / sw[:, None]
    for k in range(psi.shape[1]):
        j = np.argmax(np.abs(psi[:, k]))
        if psi[j, k] < 0:
            psi[:, k] = -psi[:, k]
    return psi, vals


def select_num_fpcs(tau, pve=0.90, drop_below=0.02):
    """Smallest count reaching the target explained share, minus subordinate FPCs.

    Components inside that prefix whose individual share is below
    ``drop_below`` are removed again (they tend to encode phase, not
    amplitude); at least one component is always kept.
    """
    tau = np.asarray(tau, dtype=float)
    if tau.size == 0:
        return 1
    shares = tau / tau.sum()
    cum = np.cumsum(shares)
    k_pve = int(np.searchsorted(cum, pve - 1e-12) + 1)
    k_pve = min(k_pve, tau.size)
    kept = np.sum(shares[:k_pve] >= drop_below)
    return max(int(kept), 1)


# --------------------------------------------------------------------------
# scores


def _interp_columns(grid, t, M):
    return np.column_stack([np.interp(t, grid, M[:, k]) for k in range(M.shape[1])])


def _map_scores_one(y, a_i, Psi_i, tau, family, max_iter=50):
    """MAP of one curve's scores under independent N(0, tau_k) priors (damped Newton)."""
    K = tau.size
    c = np.zeros(K)
    inv_tau = 1.0 / tau

    def objective(cvec):
        eta = a_i + Psi_i @ cvec
        return family.loglik(y, eta) - 0.5 * float(cvec**2 @ inv_tau)

    obj = objective(c)
    for _ in range(max_iter):
        eta = a_i + Psi_i @ c
        grad = Psi_i.T @ family.score(y, eta) - c * inv_tau
        if np.max(np.abs(grad)) < 1e-9 * (1.0 + abs(obj)):
            break
        H = Psi_i.T @ (family.hessian_diag(y, eta)[:, None] * Psi_i) - np.diag(inv_tau)
        try:
            step = np.linalg.solve(H, -grad)
        except np.linalg.LinAlgError:
            raise NewtonDiverged("singular Hessian")
        t_step = 1.0
        while t_step >= 1e-12:
            c_new = c + t_step * step
            obj_new = objective(c_new)
            if np.isfinite(obj_new) and obj_new >= obj - 1e-12:
                break
            t_step *= 0.5
        else:
            raise NewtonDiverged("no ascent step")
        moved = np.max(np.abs(c_new - c))
        c, obj = c_new, obj_new
        if moved < 1e-10 * (1.0 + np.max(np.abs(c))):
            break
    if not np.all(np.isfinite(c)):
        raise NewtonDiverged("non-finite scores")
    return c


def estimate_scores(dataset, alpha, psi, tau, family, backfit_cycles=2, grid=None,
                    mean_basis=None, max_irls=25):
    """Alternate per-curve MAP score estimation with penalized mean backfitting.

    Returns the updated latent mean on the grid, the N x K score matrix, and
    ids of curves whose Newton iteration failed (their scores are zeroed).
    """
    grid = np.linspace(0.0, 1.0, alpha.size) if grid is None else np.asarray(grid, float)
    psi = np.asarray(psi, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise InvalidRange("eigenvalues must be positive for score estimation")
    mean_basis = mean_basis or BsplineBasis.with_dimension(8)

    t_all, y_all = dataset.pooled()
    scores = np.zeros((len(dataset), tau.size))
    flagged = []
    alpha = alpha.copy()

    for _ in range(max(backfit_cycles, 1)):
        # (a) per-curve MAP scores at the current mean
        flagged = []
        for i, c in enumerate(dataset):
            a_i = np.interp(c.times, grid, alpha)
            Psi_i = _interp_columns(grid, c.times, psi)
            try:
                scores[i] = _map_scores_one(c.values, a_i, Psi_i, tau, family)
            except NewtonDiverged:
                scores[i] = 0.0
                flagged.append(c.id)
        # (b) refit the mean holding the score contributions as an offset
        offsets = np.concatenate([
            _interp_columns(grid, c.times, psi) @ scores[i]
            for i, c in enumerate(dataset)])
        coeffs = irls_spline_fit(t_all, y_all, family, mean_basis, offset=offsets,
                                 max_iter=max_irls)
        alpha = bspline.spline_value(mean_basis, coeffs, grid)

    return alpha, scores, flagged


# --------------------------------------------------------------------------
# end-to-end model


@dataclass
class GfpcaConfig:
    n_basis_mean: int = 8
    marginal_basis: int = 10
    digits: int = 3
    grid_size: int = 101
    pve: float = 0.90
    drop_below: float = 0.02
    npc: int = None  # force this many FPCs instead of the selection rule
    backfit_cycles: int = 2
    max_irls: int = 25


@dataclass
class GfpcaModel:
    """Fitted low-rank representation of the latent process."""

    grid: np.ndarray
    alpha: np.ndarray
    psi: np.ndarray
    tau: np.ndarray
    scores: np.ndarray
    family: object
    pve_report: np.ndarray
    curve_ids: list
    flagged_ids: list = field(default_factory=list)
    npc_clipped: bool = False

    @property
    def K(self):
        return self.tau.size

    def latent_representation(self, i):
        """Latent mean of curve i on the grid: alpha + sum_k scores[i,k] psi_k."""
        return self.alpha + self.psi @ self.scores[i]

    def mean_representation(self, i):
        return self.family.g(self.latent_representation(i))

    def score_variance_report(self):
        """Sample score variances against the [0.1 tau, 10 tau] sanity band (reported only)."""
        var = self.scores.var(axis=0)
        in_band = (var >= 0.1 * self.tau) & (var <= 10.0 * self.tau)
        return [{"k": k + 1, "tau": float(self.tau[k]), "score_var": float(var[k]),
                 "in_band": bool(in_band[k])} for k in range(self.K)]

    def orthonormality_error(self):
        W = np.diag(trapezoid_weights(self.grid))
        return float(np.max(np.abs(self.psi.T @ W @ self.psi - np.eye(self.K))))


def fit_gfpca(dataset, family, cfg=None):
    """Run the full two-step GFPCA pipeline on curves in internal time."""
    cfg = cfg or GfpcaConfig()
    mean = estimate_marginal_mean(dataset, family, cfg.n_basis_mean, max_iter=cfg.max_irls)

    if family.has_dispersion and family.dispersion is None:
        from .registration import resolve_dispersion
        family = resolve_dispersion(family, dataset, mean)

    centered = center_curves(dataset, mean)
    cov = assemble_crossproducts(centered, cfg.digits)
    cov = smooth_covariance(cov, cfg.marginal_basis)

    grid = np.linspace(0.0, 1.0, cfg.grid_size)
    C_lat = latent_covariance(cov, mean, family, grid=grid)
    psi_full, tau_full = eigendecompose(C_lat, grid)
    pve_report = tau_full / tau_full.sum() if tau_full.size else tau_full

    npc_clipped = False
    if cfg.npc is not None:
        if cfg.npc < 1:
            raise InvalidRange("npc must be >= 1")
        K = min(cfg.npc, tau_full.size)
        npc_clipped = K < cfg.npc
    else:
        K = select_num_fpcs(tau_full, cfg.pve, cfg.drop_below)
    psi, tau = psi_full[:, :K].copy(), tau_full[:K].copy()

    alpha0 = mean.mu_X(grid)
    mean_basis = BsplineBasis.with_dimension(cfg.n_basis_mean)
    alpha, scores, flagged = estimate_scores(dataset, alpha0, psi, tau, family,
                                             backfit_cycles=cfg.backfit_cycles, grid=grid,
                                             mean_basis=mean_basis, max_irls=cfg.max_irls)
    return GfpcaModel(grid=grid, alpha=alpha, psi=psi, tau=tau, scores=scores,
                      family=family, pve_report=pve_report,
                      curve_ids=dataset.ids(), flagged_ids=flagged,
                      npc_clipped=npc_clipped)
