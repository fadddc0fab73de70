"""Alternating registration and GFPCA until the warping functions stabilize.

One iteration registers every curve to its current low-rank representation and
then refits the GFPCA on the newly registered curves. The loop stops when the
average squared change of the inverse warpings at the observed points falls
below ``delta_h`` (per-point normalization keeps the tolerance independent of
dataset size). A final full-accuracy GFPCA pass always closes the fit.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import bspline
from .errors import InvalidRange
from .gfpca import GfpcaConfig, estimate_marginal_mean, fit_gfpca
from .registration import (RegistrationConfig, TemplateFunction, register_all,
                           registered_dataset, resolve_dispersion)

#: sentinel: use the observed overall mean curve as the initial template
MEAN_CURVE = "mean"


@dataclass
class JointConfig:
    registration: RegistrationConfig
    gfpca: GfpcaConfig = field(default_factory=GfpcaConfig)
    delta_h: float = 1e-3
    max_iter: int = 20
    initial_template: object = MEAN_CURVE
    reduced_accuracy_intermediate: bool = True

    def __post_init__(self):
        if self.delta_h <= 0:
            raise InvalidRange("delta_h must be > 0")
        if self.max_iter < 1:
            raise InvalidRange("max_iter must be >= 1")


def fixed_num_fpcs_override(cfg, K):
    """Bypass the FPC selection rule and force K components every iteration."""
    if K < 1:
        raise InvalidRange("K must be >= 1")
    return dataclasses.replace(cfg, gfpca=dataclasses.replace(cfg.gfpca, npc=int(K)))


@dataclass
class TraceRow:
    iteration: int
    warp_change: float  # mean squared h^{-1} change per observed point
    K: int
    penalized_loglik: float


@dataclass
class JointState:
    q: int
    results: list           # final per-curve registration results
    model: object            # final full-accuracy GfpcaModel
    templates: list          # per-curve templates from the final model
    trace: list
    converged: bool
    warnings: list = field(default_factory=list)

    @property
    def warpings(self):
        return [r.warping for r in self.results]


def _warp_values(results, dataset):
    return [bspline.eval_warp(r.warping, c.times) if r.warping is not None else None
            for r, c in zip(results, dataset)]


def _mean_sq_change(values_new, values_old, total_points):
    s = 0.0
    for a, b in zip(values_new, values_old):
        if a is not None and b is not None:
            s += float(np.sum((a - b) ** 2))
    return s / total_points


def _patch_failures(results, previous):
    """Curves whose re-registration failed keep their previous warping."""
    patched = []
    for r, p in zip(results, previous):
        if r.warping is None and p is not None and p.warping is not None:
            patched.append(dataclasses.replace(p, error=r.error, converged=False))
        else:
            patched.append(r)
    return patched


def _templates_from_model(model, family, n_basis):
    grid = model.grid
    return [TemplateFunction.from_grid(grid, model.latent_representation(i), family, n_basis)
            for i in range(model.scores.shape[0])]


def run_joint(dataset, cfg):
    """Joint registration and GFPCA (alternating scheme).

    Non-convergence within ``max_iter`` is reported through the returned
    ``converged`` flag and trace, never raised.
    """
    warnings = []
    family = cfg.registration.family

    if cfg.initial_template == MEAN_CURVE:
        mm = estimate_marginal_mean(dataset, family, cfg.gfpca.n_basis_mean,
                                    max_iter=cfg.gfpca.max_irls)
        template0 = TemplateFunction(mm.basis, mm.coeffs, family)
    else:
        template0 = cfg.initial_template

    # dispersion fixed once, against the initial template, for a stable penalty
    family = resolve_dispersion(family, dataset, template0)
    reg_cfg = dataclasses.replace(cfg.registration, family=family)
    template0 = TemplateFunction(template0.basis, template0.coeffs, family)

    total_points = dataset.total_points()

    results = register_all(dataset, template0, reg_cfg)
    warnings += [f"curve {r.id}: {r.error}" for r in results if r.error]
    values = _warp_values(results, dataset)
    identity_values = [c.times for c in dataset]
    trace = [TraceRow(0, _mean_sq_change(values, identity_values, total_points), 0,
                      _sum_penalized(results))]

    reduced = cfg.reduced_accuracy_intermediate
    reg_cfg_loop = dataclasses.replace(
        reg_cfg, optim=dataclasses.replace(reg_cfg.optim, tol_obj=1e-5)) if reduced else reg_cfg

    model = None
    converged = False
    q = 0
    while q < cfg.max_iter:
        q += 1
        registered = registered_dataset(dataset, results)
        intermediate = reduced and q > 1
        gf_cfg = dataclasses.replace(cfg.gfpca, backfit_cycles=1, max_irls=10) \
            if intermediate else cfg.gfpca
        model = fit_gfpca(registered, family, gf_cfg)
        if model.npc_clipped:
            warnings.append(f"iteration {q}: requested npc clipped to rank {model.K}")
        templates = _templates_from_model(model, family, cfg.gfpca.n_basis_mean)

        new_results = register_all(dataset, templates, reg_cfg_loop,
                                   warm_starts=[r.warping for r in results])
        new_results = _patch_failures(new_results, results)
        warnings += [f"iteration {q}, curve {r.id}: {r.error}" for r in new_results if r.error]

        new_values = _warp_values(new_results, dataset)
        change = _mean_sq_change(new_values, values, total_points)
        trace.append(TraceRow(q, change, model.K, _sum_penalized(new_results)))
        results, values = new_results, new_values
        if change <= cfg.delta_h:
            converged = True
            break

    # Final full-accuracy GFPCA on the last registered curves
    registered = registered_dataset(dataset, results)
    model = fit_gfpca(registered, family, cfg.gfpca)
    if model.npc_clipped:
        warnings.append(f"final pass: requested npc clipped to rank {model.K}")
    templates = _templates_from_model(model, family, cfg.gfpca.n_basis_mean)

    return JointState(q=q, results=results, model=model, templates=templates,
                      trace=trace, converged=converged, warnings=warnings)


def _sum_penalized(results):
    vals = [r.penalized_loglik for r in results if r.ok or r.warping is not None]
    return float(np.nansum(vals)) if vals else float("nan")
