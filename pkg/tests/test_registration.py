import numpy as np
import pytest

from curvereg.bspline import BsplineBasis, WarpingFunction, eval_warp, greville_identity_beta
from curvereg.constropt import build_constraints
from curvereg.expfam import make_family
from curvereg.funcdata import Curve, IncompletenessMode, from_arrays
from curvereg.registration import (RegistrationConfig, TemplateFunction, feasible_identity_beta,
                                   make_objective, penalty, register_all, register_curve,
                                   registered_dataset, resolve_dispersion)

M = IncompletenessMode

GRID = np.linspace(0.0, 1.0, 201)


def bump(t):
    return np.exp(-0.5 * ((np.asarray(t) - 0.45) / 0.2) ** 2) / (0.2 * np.sqrt(2 * np.pi))


def bump_template(family):
    return TemplateFunction.from_grid(GRID, bump(GRID), family, n_basis=8)


def warp_of(basis_interval, lo, hi, mode):
    basis = BsplineBasis.with_dimension(4, a=basis_interval[0], b=basis_interval[1])
    return WarpingFunction(basis, greville_identity_beta(basis, lo, hi), mode)


def test_penalty_identity_is_zero():
    for mode in M:
        w = warp_of((0.1, 0.8), 0.1, 0.8, mode)
        assert penalty(w) == pytest.approx(0.0, abs=1e-12)


def test_penalty_trailing_example():
    w = warp_of((0.0, 0.8), 0.0, 1.0, M.TRAILING)
    assert penalty(w) == pytest.approx(0.04, abs=1e-12)


def test_penalty_full_example():
    w = warp_of((0.1, 0.8), 0.0, 0.9, M.FULL)
    assert penalty(w) == pytest.approx(0.04, abs=1e-12)


def test_penalty_complete_always_zero():
    w = warp_of((0.2, 0.9), 0.2, 0.9, M.COMPLETE)
    assert penalty(w) == 0.0


def random_feasible_beta(rng, constraints, lo=0.05, hi=0.95):
    gaps = rng.uniform(0.01, 1.0, size=constraints.p - 1)
    beta = np.concatenate([[0.0], np.cumsum(gaps)])
    beta = lo + (hi - lo) * beta / beta[-1]
    for idx, val in constraints.pinned.items():
        beta[idx] = val
    return np.sort(beta)


@pytest.mark.parametrize("family", ["gaussian", "gamma", "binomial"])
def test_objective_gradient_matches_finite_differences(family, rng):
    fam = {"gaussian": make_family("gaussian", 0.03),
           "gamma": make_family("gamma", 5.0),
           "binomial": make_family("binomial")}[family]
    template = bump_template(fam) if family != "binomial" else \
        TemplateFunction.from_grid(GRID, np.sin(2 * np.pi * GRID), fam, n_basis=8)
    t = np.linspace(0.1, 0.9, 40)
    for _ in range(20):
        eta_true = template.latent(t)
        y = fam.sample(rng, eta_true)
        if family == "gamma":
            y = np.maximum(y, 1e-8)
        curve = Curve("x", t, y)
        mode = rng.choice(list(M))
        cfg = RegistrationConfig(family=fam, lam=0.025, K_h=4, mode=mode)
        cs = build_constraints(mode, 4, curve.t_min, curve.t_max)
        from curvereg.bspline import design_matrix
        theta_h = design_matrix(BsplineBasis.with_dimension(4, a=curve.t_min, b=curve.t_max),
                                curve.times)
        fg = make_objective(curve, template, cfg, cs, theta_h)
        beta_free = cs.extract_free(random_feasible_beta(rng, cs, lo=0.15, hi=0.85))
        _, grad = fg(beta_free)
        h = 1e-6
        for j in range(beta_free.size):
            e = np.zeros_like(beta_free)
            e[j] = h
            fd = (fg(beta_free + e)[0] - fg(beta_free - e)[0]) / (2 * h)
            assert abs(grad[j] - fd) <= 1e-5 * (1.0 + abs(fd))


def simulate_affine_curves(rng, n_curves=6, n_points=50, sigma2=0.03):
    fam = make_family("gaussian", sigma2)
    template = bump_template(fam)
    curves, slopes = [], []
    for i in range(n_curves):
        L = rng.uniform(0.6, 0.8)
        s = rng.uniform(0.95, 1.25)
        while s * L > 1.0:
            s = rng.uniform(0.95, 1.25)
        t_star = np.linspace(0.0, L, n_points)
        internal = s * t_star
        y = rng.normal(template.latent(internal), np.sqrt(sigma2))
        curves.append(Curve(f"c{i}", t_star, y))
        slopes.append(s)
    return curves, slopes, template, fam


def test_register_recovers_affine_warp(rng):
    curves, slopes, template, fam = simulate_affine_curves(rng)
    cfg = RegistrationConfig(family=fam, lam=0.025, K_h=4, mode=M.TRAILING)
    for curve, s in zip(curves, slopes):
        res = register_curve(curve, template, cfg)
        assert res.ok and res.converged
        hinv = eval_warp(res.warping, curve.times)
        mise = np.trapezoid((hinv - s * curve.times) ** 2, curve.times)
        assert mise <= 1e-3


def test_register_aligned_curve_stays_identity(rng):
    fam = make_family("gaussian", 0.03)
    template = bump_template(fam)
    t = np.linspace(0.0, 1.0, 60)
    y = rng.normal(template.latent(t), np.sqrt(0.03))
    curve = Curve("a", t, y)
    cfg = RegistrationConfig(family=fam, lam=0.025, K_h=4, mode=M.COMPLETE)
    res = register_curve(curve, template, cfg)
    hinv = eval_warp(res.warping, t)
    assert np.max(np.abs(hinv - t)) <= 1e-2


def test_huge_lambda_pins_duration(rng):
    fam = make_family("gaussian", 0.03)
    template = bump_template(fam)
    t = np.linspace(0.1, 0.8, 50)
    y = rng.normal(template.latent(np.linspace(0.05, 0.95, 50)), np.sqrt(0.03))
    curve = Curve("a", t, y)
    cfg = RegistrationConfig(family=fam, lam=1e6, K_h=4, mode=M.FULL)
    res = register_curve(curve, template, cfg)
    lo, hi = res.warping.registered_interval
    assert abs((hi - lo) - (curve.t_max - curve.t_min)) <= 1e-4


def test_register_objective_beats_identity(rng):
    curves, _, template, fam = simulate_affine_curves(rng, n_curves=3)
    cfg = RegistrationConfig(family=fam, lam=0.025, K_h=4, mode=M.TRAILING)
    for curve in curves:
        res = register_curve(curve, template, cfg)
        basis = res.warping.basis
        ident = WarpingFunction(basis, feasible_identity_beta(basis, M.TRAILING), M.TRAILING)
        eta_id = template.latent(eval_warp(ident, curve.times))
        obj_id = fam.loglik(curve.values, eta_id) - cfg.lam * curve.n * penalty(ident)
        assert res.penalized_loglik >= obj_id - 1e-9


def test_registration_invariants(rng):
    curves, _, template, fam = simulate_affine_curves(rng, n_curves=4)
    for mode in (M.COMPLETE, M.LEADING, M.TRAILING, M.FULL):
        cfg = RegistrationConfig(family=fam, lam=0.025, K_h=4, mode=mode)
        res = register_curve(curves[0], template, cfg)
        w = res.warping
        grid = np.linspace(w.basis.a, w.basis.b, 1000)
        vals = eval_warp(w, grid)
        assert np.all(np.diff(vals) >= -1e-12)
        assert vals.min() >= -1e-10 and vals.max() <= 1.0 + 1e-10
        if mode.pins_start:
            assert vals[0] == curves[0].t_min
        if mode.pins_end:
            assert vals[-1] == curves[0].t_max


def test_lambda_sweep_monotone_length_distortion(rng):
    curves, _, template, fam = simulate_affine_curves(rng, n_curves=8)
    ds = from_arrays([c.id for c in curves], [c.times for c in curves],
                     [c.values for c in curves], mode=M.TRAILING, normalize=False)
    distortions = []
    for lam in (0.0, 0.025, 0.1, 1.0):
        cfg = RegistrationConfig(family=fam, lam=lam, K_h=4, mode=M.TRAILING)
        results = register_all(ds, template, cfg)
        d = np.mean([abs((r.warping.registered_interval[1] - r.warping.registered_interval[0])
                         - (c.t_max - c.t_min)) for r, c in zip(results, ds)])
        distortions.append(d)
    assert all(a >= b - 1e-9 for a, b in zip(distortions, distortions[1:]))


def test_register_all_matches_worker_counts(rng):
    curves, _, template, fam = simulate_affine_curves(rng, n_curves=6)
    ds = from_arrays([c.id for c in curves], [c.times for c in curves],
                     [c.values for c in curves], mode=M.TRAILING, normalize=False)
    cfg1 = RegistrationConfig(family=fam, lam=0.025, mode=M.TRAILING, workers=1)
    cfg2 = RegistrationConfig(family=fam, lam=0.025, mode=M.TRAILING, workers=4)
    r1 = register_all(ds, template, cfg1)
    r2 = register_all(ds, template, cfg2)
    assert [r.id for r in r1] == [r.id for r in r2]
    for a, b in zip(r1, r2):
        np.testing.assert_array_equal(a.warping.beta, b.warping.beta)


def test_register_all_broadcasts_shared_template(rng):
    curves, _, template, fam = simulate_affine_curves(rng, n_curves=3)
    ds = from_arrays([c.id for c in curves], [c.times for c in curves],
                     [c.values for c in curves], mode=M.TRAILING, normalize=False)
    cfg = RegistrationConfig(family=fam, lam=0.025, mode=M.TRAILING)
    shared = register_all(ds, template, cfg)
    explicit = register_all(ds, [template] * len(curves), cfg)
    for a, b in zip(shared, explicit):
        np.testing.assert_array_equal(a.warping.beta, b.warping.beta)


def test_flat_template_flagged_others_unaffected(rng):
    fam = make_family("gamma", 5.0)
    template = TemplateFunction.from_grid(GRID, np.log(bump(GRID) + 0.5), fam, n_basis=8)
    flat = TemplateFunction.from_grid(GRID, np.full_like(GRID, 0.3), fam, n_basis=8)
    t = np.linspace(0.0, 1.0, 40)
    good = Curve("good", t, rng.gamma(5.0, np.exp(template.latent(t)) / 5.0))
    degenerate = Curve("deg", t, np.full_like(t, 2.0))
    ds = from_arrays(["good", "deg"], [t, t], [good.values, degenerate.values],
                     mode=M.COMPLETE, normalize=False)
    cfg = RegistrationConfig(family=fam, lam=0.025, mode=M.COMPLETE)
    results = register_all(ds, [template, flat], cfg)
    assert results[0].ok
    assert results[1].error is not None and "DegenerateTemplate" in results[1].error
    assert results[1].warping is not None  # identity returned
    ident = eval_warp(results[1].warping, t)
    assert np.max(np.abs(ident - t)) <= 1e-5


def test_resolve_dispersion_gaussian(rng):
    fam = make_family("gaussian")
    template = bump_template(make_family("gaussian", 1.0))
    t = np.linspace(0, 1, 80)
    curves, values = [], []
    for i in range(5):
        values.append(rng.normal(template.latent(t), 0.4))
        curves.append(f"c{i}")
    ds = from_arrays(curves, [t] * 5, values, normalize=False)
    resolved = resolve_dispersion(fam, ds, template)
    assert resolved.dispersion == pytest.approx(0.16, rel=0.25)


def test_registered_dataset_times(rng):
    curves, slopes, template, fam = simulate_affine_curves(rng, n_curves=3)
    ds = from_arrays([c.id for c in curves], [c.times for c in curves],
                     [c.values for c in curves], mode=M.TRAILING, normalize=False)
    cfg = RegistrationConfig(family=fam, lam=0.025, mode=M.TRAILING)
    results = register_all(ds, template, cfg)
    reg = registered_dataset(ds, results)
    for c_syn, c_orig, r in zip(reg, ds, results):
        assert np.all(np.diff(c_syn.times) > 0)
        np.testing.assert_array_equal(c_syn.values, c_orig.values)
