"""Simulation settings and performance metrics for benchmarking the joint fit.

Curves are drawn from a low-rank latent Gaussian process (mean: Gaussian
density bump; FPCs: orthonormalized shifted Legendre polynomials), randomly
warped with a monotone cubic spline, observed through the chosen family, and
optionally cut off at a random trailing time. Everything is reproducible from
the seed.
"""

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre
from scipy.special import ndtr

from .bspline import BsplineBasis, WarpingFunction, eval_warp
from .errors import DegenerateBasis, GridMismatch, InvalidRange, LengthMismatch
from .expfam import make_family
from .funcdata import IncompletenessMode, from_arrays
from .gfpca import GfpcaConfig
from .joint import JointConfig, run_joint
from .registration import RegistrationConfig

_TAU_BY_RANK = {1: (1.0,), 3: (0.7, 0.25, 0.05), 4: (0.4, 0.3, 0.2, 0.1)}
_CUTOFF_WINDOW = {"weak": 0.6, "strong": 0.3}  # cutoff uniform on [window, 1]

CORRELATIONS = ("none", "amp_phase_negative", "amp_incompleteness_positive")


@dataclass(frozen=True)
class SimSetting:
    family: str = "gaussian"
    rank: int = 1
    incompleteness: str = "complete"
    correlation: str = "none"
    N: int = 100
    D: int = 50
    seed: int = 1
    rho: float = 0.6          # copula correlation magnitude for the correlated settings
    sigma2: float = 0.03      # Gaussian observation variance
    gamma_shape: float = 5.0

    def __post_init__(self):
        if self.rank not in _TAU_BY_RANK:
            raise InvalidRange(f"rank must be one of {sorted(_TAU_BY_RANK)}")
        if self.incompleteness not in ("complete", *_CUTOFF_WINDOW):
            raise InvalidRange("incompleteness must be complete, weak or strong")
        if self.correlation not in CORRELATIONS:
            raise InvalidRange(f"correlation must be one of {CORRELATIONS}")
        if self.family not in ("gaussian", "gamma"):
            raise InvalidRange("simulation families are gaussian and gamma")
        if self.N < 2 or self.D < 2:
            raise InvalidRange("need N >= 2 and D >= 2")

    @property
    def tau(self):
        return np.array(_TAU_BY_RANK[self.rank])

    def make_family(self):
        if self.family == "gaussian":
            return make_family("gaussian", self.sigma2)
        return make_family("gamma", self.gamma_shape)

    @property
    def mode(self):
        return (IncompletenessMode.COMPLETE if self.incompleteness == "complete"
                else IncompletenessMode.TRAILING)


@dataclass
class SimTruth:
    grid: np.ndarray          # internal time grid (length D)
    alpha: np.ndarray
    psi: np.ndarray           # D x K
    tau: np.ndarray
    scores: np.ndarray        # N x K
    X: np.ndarray             # N x D latent values
    warp_basis: BsplineBasis
    warp_beta: np.ndarray     # N x 4, forward warp h: internal -> chronological
    t_star: list              # per-curve observed (kept) chronological times
    internal: list            # per-curve internal times of the kept samples
    cutoffs: np.ndarray       # per-curve trailing cutoff (1.0 when complete)
    lengths: np.ndarray       # true registered domain lengths

    def latent_mean(self, i):
        """g-free latent values at the kept samples of curve i."""
        keep = len(self.internal[i])
        return self.X[i][:keep]


def mean_function(t):
    """Gaussian density bump with mu=0.45, sigma=0.2."""
    t = np.asarray(t, dtype=float)
    return np.exp(-0.5 * ((t - 0.45) / 0.2) ** 2) / (0.2 * math.sqrt(2.0 * math.pi))


def orthonormal_polynomials(t, K):
    """First K non-constant orthonormal Legendre polynomials on [0, 1].

    Column k (0-based) is sqrt(2k+3) * P_{k+1}(2t - 1); the constant polynomial
    is skipped because the mean carries it.
    """
    t = np.asarray(t, dtype=float)
    x = 2.0 * t - 1.0
    cols = []
    for k in range(1, K + 1):
        coef = np.zeros(k + 1)
        coef[k] = 1.0
        cols.append(math.sqrt(2 * k + 1) * legendre.legval(x, coef))
    return np.column_stack(cols)


def _driver_correlation(setting):
    S = np.eye(3)
    if setting.correlation == "amp_phase_negative":
        S[0, 1] = S[1, 0] = -setting.rho
    elif setting.correlation == "amp_incompleteness_positive":
        S[0, 2] = S[2, 0] = setting.rho
    return S


def simulate(setting):
    """Draw one dataset plus its ground truth."""
    rng = np.random.default_rng(setting.seed)
    grid = np.linspace(0.0, 1.0, setting.D)
    tau = setting.tau
    K = tau.size
    family = setting.make_family()

    alpha = mean_function(grid)
    psi = orthonormal_polynomials(grid, K)

    # drivers: (amplitude, phase, incompleteness) linked by a Gaussian copula
    L = np.linalg.cholesky(_driver_correlation(setting))
    Z = rng.standard_normal((setting.N, 3)) @ L.T

    scores = np.empty((setting.N, K))
    scores[:, 0] = math.sqrt(tau[0]) * Z[:, 0]
    if K > 1:
        scores[:, 1:] = rng.standard_normal((setting.N, K - 1)) * np.sqrt(tau[1:])

    # monotone warps: cubic basis, first coefficient 0, remaining three the
    # cumulative sum of uniforms, rescaled so h maps [0,1] onto [0,1]
    u = np.empty((setting.N, 3))
    u[:, 0] = ndtr(Z[:, 1])
    u[:, 1:] = rng.uniform(size=(setting.N, 2))
    u = np.maximum(u, 1e-12)
    beta = np.concatenate([np.zeros((setting.N, 1)), np.cumsum(u, axis=1)], axis=1)
    beta /= beta[:, -1:]
    warp_basis = BsplineBasis.with_dimension(4)

    X = alpha[None, :] + scores @ psi.T
    Y = np.stack([family.sample(rng, X[i]) for i in range(setting.N)])

    if setting.incompleteness == "complete":
        cutoffs = np.ones(setting.N)
    else:
        lo = _CUTOFF_WINDOW[setting.incompleteness]
        cutoffs = lo + (1.0 - lo) * ndtr(Z[:, 2])

    ids, t_obs, y_obs, internal = [], [], [], []
    lengths = np.empty(setting.N)
    for i in range(setting.N):
        w = WarpingFunction(warp_basis, beta[i], IncompletenessMode.FULL)
        t_star_full = eval_warp(w, grid)  # clamped basis: hits 0 and 1 exactly
        keep = t_star_full <= cutoffs[i]
        keep[:2] = True  # a curve always keeps at least its first two samples
        ids.append(f"c{i:03d}")
        t_obs.append(t_star_full[keep])
        y_obs.append(Y[i][keep])
        internal.append(grid[keep])
        lengths[i] = grid[keep][-1] - grid[0]

    dataset = from_arrays(ids, t_obs, y_obs, mode=setting.mode, normalize=False)
    truth = SimTruth(grid=grid, alpha=alpha, psi=psi, tau=tau, scores=scores, X=X,
                     warp_basis=warp_basis, warp_beta=beta, t_star=t_obs,
                     internal=internal, cutoffs=cutoffs, lengths=lengths)
    return dataset, truth


# --------------------------------------------------------------------------
# metrics


def _check_grids(values_a, values_b, grids):
    if not (len(values_a) == len(values_b) == len(grids)):
        raise GridMismatch("metric inputs must have one entry per curve")
    for a, b, t in zip(values_a, values_b, grids):
        if len(a) != len(t) or len(b) != len(t):
            raise GridMismatch("curve values and grid lengths differ")


def mise_y(true_means, fitted_means, grids):
    """Mean trapezoid-integrated squared difference of response-scale means."""
    _check_grids(true_means, fitted_means, grids)
    vals = [np.trapezoid((np.asarray(a) - np.asarray(b)) ** 2, t)
            for a, b, t in zip(true_means, fitted_means, grids)]
    return float(np.mean(vals))


def mise_h(true_warps, est_warps, grids):
    """Mean trapezoid-integrated squared difference of inverse warping values."""
    return mise_y(true_warps, est_warps, grids)


def lv_psi(A, B):
    """Span overlap of two bases: trace(V_B' V_A V_A' V_B) / p_A in [0, 1]."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    for M in (A, B):
        if M.ndim != 2 or M.shape[0] <= M.shape[1]:
            raise InvalidRange("basis matrices must be tall (m > p)")
        if np.any(np.linalg.norm(M, axis=0) == 0.0):
            raise DegenerateBasis("basis contains a zero column")
    Va = np.linalg.svd(A, full_matrices=False)[0]
    Vb = np.linalg.svd(B, full_matrices=False)[0]
    M = Vb.T @ Va
    return float(np.trace(M @ M.T)) / A.shape[1]


def mse_d(true_lengths, est_lengths):
    """Mean squared difference of registered domain lengths."""
    a = np.asarray(true_lengths, dtype=float)
    b = np.asarray(est_lengths, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch("length vectors differ in size")
    return float(np.mean((a - b) ** 2))


# --------------------------------------------------------------------------
# benchmark harness


@dataclass
class MethodConfig:
    """How the joint fit is run inside the benchmark."""

    lam: float = 0.025
    mode: object = "auto"        # "auto" = match the setting, or an IncompletenessMode
    npc: object = "true"         # "true" = simulated rank, int, or "adaptive"
    K_h: int = 4
    max_iter: int = 3
    delta_h: float = 1e-3
    workers: int = 1
    grid_size: int = 101
    dispersion: float = None     # None = estimate from the initial template


METRIC_COLUMNS = ("mise_y", "mise_h", "one_minus_lv", "mse_d")


def evaluate_fit(state, dataset, truth, family):
    """The four §-metrics of one fitted joint state against the simulation truth."""
    model = state.model
    grids = [c.times for c in dataset]
    hinv_est = [eval_warp(r.warping, c.times) for r, c in zip(state.results, dataset)]
    hinv_true = truth.internal

    fitted = []
    for i, c in enumerate(dataset):
        latent = np.interp(hinv_est[i], model.grid, model.latent_representation(i))
        fitted.append(family.g(latent))
    true_mean = [family.g(truth.X[i][:len(truth.internal[i])]) for i in range(len(dataset))]

    psi_hat = np.column_stack([
        np.interp(truth.grid, model.grid, model.psi[:, k]) for k in range(model.K)])
    est_lengths = np.array([r.warping.registered_interval[1] -
                            r.warping.registered_interval[0] for r in state.results])

    return {
        "mise_y": mise_y(true_mean, fitted, grids),
        "mise_h": mise_h(hinv_true, hinv_est, grids),
        "one_minus_lv": 1.0 - lv_psi(truth.psi, psi_hat),
        "mse_d": mse_d(truth.lengths, est_lengths),
    }


def joint_config_for(setting, method):
    # dispersion None lets the joint fit estimate it from the initial template
    family = make_family(setting.family, method.dispersion)
    mode = setting.mode if method.mode == "auto" else method.mode
    reg = RegistrationConfig(family=family, lam=method.lam, K_h=method.K_h,
                             mode=mode, workers=method.workers)
    npc = None
    if method.npc == "true":
        npc = setting.rank
    elif isinstance(method.npc, int):
        npc = method.npc
    gf = GfpcaConfig(npc=npc, grid_size=method.grid_size)
    return JointConfig(registration=reg, gfpca=gf, delta_h=method.delta_h,
                       max_iter=method.max_iter)


@dataclass
class BenchmarkResult:
    setting: SimSetting
    method: MethodConfig
    rows: list = field(default_factory=list)      # dicts: replication + metrics (or error)
    medians: dict = field(default_factory=dict)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(("replication",) + METRIC_COLUMNS)
            for row in self.rows:
                writer.writerow([row["replication"]] +
                                [_fmt(row.get(c)) for c in METRIC_COLUMNS])
            writer.writerow(["median"] + [_fmt(self.medians.get(c)) for c in METRIC_COLUMNS])

    def write_summary(self, path):
        payload = {
            "setting": dataclasses.asdict(self.setting),
            "method": {k: str(v) for k, v in dataclasses.asdict(self.method).items()},
            "replications": len(self.rows),
            "failures": [r for r in self.rows if "error" in r],
            "medians": self.medians,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(x):
    return "" if x is None else f"{x:.17g}"


def run_benchmark(setting, method, replications=20):
    """Replicated simulation benchmark; replication r runs on seed + r."""
    rows = []
    for r in range(replications):
        setting_r = dataclasses.replace(setting, seed=setting.seed + r)
        row = {"replication": r}
        try:
            dataset, truth = simulate(setting_r)
            cfg = joint_config_for(setting_r, method)
            state = run_joint(dataset, cfg)
            row.update(evaluate_fit(state, dataset, truth, state.model.family))
        except Exception as exc:  # failed replications become annotated gaps
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    medians = {}
    for col in METRIC_COLUMNS:
        vals = [row[col] for row in rows if col in row]
        medians[col] = float(np.median(vals)) if vals else None
    return BenchmarkResult(setting=setting, method=method, rows=rows, medians=medians)
