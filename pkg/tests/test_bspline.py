import numpy as np
import pytest

from curvereg.bspline import (AUTO, BsplineBasis, WarpingFunction, design_matrix,
                              difference_matrix, eval_warp, greville_identity_beta,
                              penalized_spline_fit, penalty_matrix, spline_derivative,
                              spline_value)
from curvereg.errors import InvalidRange, OutOfDomain, SingularSystem


def cox_de_boor(x, k, i, knots):
    """Independent recursive basis evaluation (oracle)."""
    if k == 0:
        # right-closed on the last interval so the endpoint belongs to a basis
        last = knots[i + 1] == knots[-1]
        if last and knots[i] <= x <= knots[i + 1] and knots[i] < knots[i + 1]:
            return 1.0
        return 1.0 if knots[i] <= x < knots[i + 1] else 0.0
    left = 0.0
    if knots[i + k] != knots[i]:
        left = (x - knots[i]) / (knots[i + k] - knots[i]) * cox_de_boor(x, k - 1, i, knots)
    right = 0.0
    if knots[i + k + 1] != knots[i + 1]:
        right = ((knots[i + k + 1] - x) / (knots[i + k + 1] - knots[i + 1])
                 * cox_de_boor(x, k - 1, i + 1, knots))
    return left + right


def oracle_row(basis, x):
    return np.array([cox_de_boor(x, basis.degree, i, basis.knots) for i in range(basis.K)])


def test_design_matrix_endpoints():
    basis = BsplineBasis(degree=3, interior_knot_count=3)
    D = design_matrix(basis, np.array([0.0, 1.0]))
    expected0 = np.zeros(basis.K)
    expected0[0] = 1.0
    expected1 = np.zeros(basis.K)
    expected1[-1] = 1.0
    np.testing.assert_allclose(D[0], expected0, atol=1e-14)
    np.testing.assert_allclose(D[1], expected1, atol=1e-14)


def test_design_matrix_midpoint_cubic_k4():
    # hand value from the Cox-de Boor recursion
    basis = BsplineBasis(degree=3, interior_knot_count=0)
    D = design_matrix(basis, np.array([0.5]))
    np.testing.assert_allclose(D[0], [0.125, 0.375, 0.375, 0.125], atol=1e-14)
    np.testing.assert_allclose(D[0], oracle_row(basis, 0.5), atol=1e-12)


def test_design_matrix_matches_oracle(rng):
    for K in (4, 5, 8):
        basis = BsplineBasis.with_dimension(K, a=0.2, b=0.9)
        ts = rng.uniform(0.2, 0.9, size=25)
        D = design_matrix(basis, ts)
        for row, x in zip(D, ts):
            np.testing.assert_allclose(row, oracle_row(basis, x), atol=1e-12)


def test_partition_of_unity(rng):
    for degree, interior in [(1, 0), (2, 3), (3, 0), (3, 5), (4, 2)]:
        basis = BsplineBasis(degree=degree, interior_knot_count=interior)
        t = rng.uniform(0.0, 1.0, size=1000)
        D = design_matrix(basis, t)
        np.testing.assert_allclose(D.sum(axis=1), 1.0, atol=1e-12)


def test_local_support(rng):
    basis = BsplineBasis(degree=3, interior_knot_count=6)
    D = design_matrix(basis, rng.uniform(0, 1, size=200))
    assert np.all((D > 0).sum(axis=1) <= basis.degree + 1)


def test_out_of_domain_raises():
    basis = BsplineBasis(a=0.1, b=0.8)
    with pytest.raises(OutOfDomain):
        design_matrix(basis, np.array([0.9]))


def test_greville_identity_k4():
    basis = BsplineBasis(degree=3, interior_knot_count=0)
    beta = greville_identity_beta(basis, 0.0, 1.0)
    np.testing.assert_allclose(beta, [0.0, 1 / 3, 2 / 3, 1.0], atol=1e-14)


def test_greville_affine_map():
    basis = BsplineBasis.with_dimension(5, a=0.0, b=0.8)
    beta = greville_identity_beta(basis, 0.0, 1.0)
    w = WarpingFunction(basis, beta)
    t = np.linspace(0.0, 0.8, 37)
    np.testing.assert_allclose(eval_warp(w, t), t / 0.8, atol=1e-12)
    assert np.all(np.diff(beta) > 0)


def test_eval_warp_identity_and_constant():
    basis = BsplineBasis.with_dimension(6, a=0.1, b=0.9)
    ident = WarpingFunction(basis, greville_identity_beta(basis, 0.1, 0.9))
    t = np.linspace(0.1, 0.9, 50)
    np.testing.assert_allclose(eval_warp(ident, t), t, atol=1e-10)
    const = WarpingFunction(basis, np.full(basis.K, 0.4))
    np.testing.assert_allclose(eval_warp(const, t), 0.4, atol=1e-12)


def test_eval_warp_monotone_random_beta(rng):
    for _ in range(20):
        basis = BsplineBasis.with_dimension(int(rng.integers(4, 9)))
        beta = np.sort(rng.uniform(0, 1, size=basis.K))
        w = WarpingFunction(basis, beta)
        t = np.sort(rng.uniform(0, 1, size=200))
        out = eval_warp(w, t)
        assert np.all(np.diff(out) >= -1e-12)
        np.testing.assert_allclose(out, design_matrix(basis, t) @ beta, atol=1e-14)
        assert out.min() >= beta[0] - 1e-12 and out.max() <= beta[-1] + 1e-12


def test_warping_invariants_enforced():
    basis = BsplineBasis.with_dimension(4)
    with pytest.raises(InvalidRange):
        WarpingFunction(basis, np.array([0.5, 0.4, 0.6, 0.9]))
    with pytest.raises(InvalidRange):
        WarpingFunction(basis, np.array([0.0, 0.4, 0.6, 1.2]))


def test_difference_matrix():
    D2 = difference_matrix(5, 2)
    assert D2.shape == (3, 5)
    np.testing.assert_allclose(D2 @ np.arange(5.0), 0.0, atol=1e-14)


def test_penalized_fit_constant():
    basis = BsplineBasis.with_dimension(8)
    t = np.linspace(0, 1, 40)
    theta = penalized_spline_fit(t, np.full(40, 3.25), np.ones(40), basis, 2, 17.0)
    np.testing.assert_allclose(spline_value(basis, theta, t), 3.25, atol=1e-8)


def test_penalized_fit_interpolates_unpenalized(rng):
    basis = BsplineBasis.with_dimension(6)
    t = np.linspace(0.02, 0.98, basis.K)
    y = rng.normal(size=basis.K)
    theta = penalized_spline_fit(t, y, np.ones_like(t), basis, 2, 0.0)
    np.testing.assert_allclose(spline_value(basis, theta, t), y, atol=1e-8)


def normal_equations_oracle(B, y, w, D, lam):
    return np.linalg.solve(B.T @ (w[:, None] * B) + lam * D.T @ D, B.T @ (w * y))


def test_penalty_matrix_annihilates_affine_coefficients():
    basis = BsplineBasis.with_dimension(9)
    D = penalty_matrix(basis, 2)
    theta_affine = 0.7 + 2.5 * basis.greville()
    np.testing.assert_allclose(D @ theta_affine, 0.0, atol=1e-12)
    np.testing.assert_allclose(penalty_matrix(basis, 1) @ np.full(basis.K, 4.0), 0.0,
                               atol=1e-12)


def test_penalized_fit_linear_in_null_space(rng):
    # order-2 penalty never distorts affine targets, at any smoothing level
    basis = BsplineBasis.with_dimension(9)
    t = np.linspace(0, 1, 80)
    y = t.copy()
    B = design_matrix(basis, t)
    D = penalty_matrix(basis, 2)
    for lam in (0.0, 1e-3, 1.0, 1e6):
        theta = penalized_spline_fit(t, y, np.ones_like(t), basis, 2, lam)
        np.testing.assert_allclose(spline_value(basis, theta, t), t, atol=1e-8)
        oracle = normal_equations_oracle(B, y, np.ones_like(t), D, lam)
        np.testing.assert_allclose(theta, oracle, atol=1e-8)


def test_penalized_fit_auto_recovers_smooth_signal(rng):
    basis = BsplineBasis.with_dimension(10)
    t = np.linspace(0, 1, 200)
    y = np.sin(2 * np.pi * t) + rng.normal(0, 0.05, size=t.size)
    theta = penalized_spline_fit(t, y, np.ones_like(t), basis, 2, AUTO)
    assert np.max(np.abs(spline_value(basis, theta, t) - np.sin(2 * np.pi * t))) < 0.1


def test_penalized_fit_too_few_points():
    basis = BsplineBasis.with_dimension(8)
    t = np.linspace(0, 1, 4)
    with pytest.raises(SingularSystem):
        penalized_spline_fit(t, t, np.ones_like(t), basis, 2, 1.0)


def test_spline_derivative_of_identity():
    basis = BsplineBasis.with_dimension(7, a=0.0, b=1.0)
    beta = greville_identity_beta(basis, 0.0, 1.0)
    d = spline_derivative(basis, beta, np.linspace(0, 1, 11))
    np.testing.assert_allclose(d, 1.0, atol=1e-10)
