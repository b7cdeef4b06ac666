import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conformpc.exceptions import InputError, NumericalError
from conformpc.stats import (GaussianSummary, chi2_cdf, chi2_confidence_radius,
                             empirical_summary, full_row_rank, hankel, hinge_penalty,
                             mahalanobis_sq, regularized_lower_gamma, scaled_ridge)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def random_spd(rng, n):
    L = rng.normal(size=(n, n))
    return L @ L.T + 0.5 * np.eye(n)


# values frozen from scipy.special.gammainc / scipy.stats.chi2
@pytest.mark.parametrize("s, x, expected", [
    (0.5, 0.3, 0.5614219739190003),
    (1.5, 4.0, 0.9539882943107686),
    (4.0, 2.0, 0.14287653950145296),
    (10.0, 25.0, 0.9997785233617512),
])
def test_regularized_lower_gamma_matches_reference(s, x, expected):
    assert regularized_lower_gamma(s, x) == pytest.approx(expected, abs=1e-13)


def test_regularized_lower_gamma_edges():
    assert regularized_lower_gamma(2.0, 0.0) == 0.0
    assert regularized_lower_gamma(2.0, math.inf) == 1.0
    with pytest.raises(InputError):
        regularized_lower_gamma(0.0, 1.0)
    with pytest.raises(InputError):
        regularized_lower_gamma(1.0, -1.0)


@given(st.floats(0.05, 40), st.floats(0.0, 80), st.floats(0.0, 5))
def test_lower_gamma_monotone_in_x(s, x, dx):
    assert regularized_lower_gamma(s, x + dx) >= regularized_lower_gamma(s, x) - 1e-14


@pytest.mark.parametrize("dof, conf, expected", [
    (1, 0.95, 3.841458820694124),
    (2, 0.95, 5.991464547107979),
    (8, 0.95, 15.50731305586545),
    (3, 0.99, 11.344866730144373),
    (20, 0.5, 19.337429229428256),
])
def test_confidence_radius_reference(dof, conf, expected):
    assert chi2_confidence_radius(dof, conf) == pytest.approx(expected, abs=1e-6)


def test_radius_two_dof_closed_form():
    assert abs(chi2_confidence_radius(2, 0.95) - (-2.0 * math.log(0.05))) < 1e-6


def test_two_sigma_coverage_in_one_dimension():
    assert chi2_cdf(4.0, 1) == pytest.approx(0.9545, abs=5e-4)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.floats(0.01, 0.999))
def test_radius_inverts_cdf(dof, conf):
    d = chi2_confidence_radius(dof, conf)
    assert abs(chi2_cdf(d, dof) - conf) < 1e-9


@pytest.mark.parametrize("dof, conf", [(0, 0.5), (1.5, 0.5), (2, 0.0), (2, 1.0), (-1, 0.3)])
def test_radius_rejects_bad_arguments(dof, conf):
    with pytest.raises(InputError):
        chi2_confidence_radius(dof, conf)


def test_mahalanobis_identity_is_squared_norm():
    s = GaussianSummary.from_moments(np.zeros(3), np.eye(3))
    assert mahalanobis_sq([1.0, -2.0, 0.5], s) == pytest.approx(5.25)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mahalanobis_matches_explicit_inverse(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    cov = random_spd(rng, n)
    mu = rng.normal(size=n)
    x = rng.normal(size=n)
    s = GaussianSummary.from_moments(mu, cov)
    d = x - mu
    assert mahalanobis_sq(x, s) == pytest.approx(d @ np.linalg.solve(cov, d), rel=1e-10)
    assert mahalanobis_sq(mu, s) == 0.0


def test_mahalanobis_dimension_mismatch():
    s = GaussianSummary.from_moments(np.zeros(2), np.eye(2))
    with pytest.raises(InputError):
        mahalanobis_sq([1.0, 2.0, 3.0], s)


def test_indefinite_covariance_rejected():
    with pytest.raises(NumericalError):
        GaussianSummary.from_moments(np.zeros(2), [[1.0, 2.0], [2.0, 1.0]])


def test_whiten_reproduces_distance():
    rng = np.random.default_rng(3)
    s = GaussianSummary.from_moments(rng.normal(size=3), random_spd(rng, 3))
    S = rng.normal(size=(3, 5))
    off = rng.normal(size=3)
    W, w = s.whiten(S, off)
    for _ in range(5):
        z = rng.normal(size=5)
        assert np.sum((W @ z + w) ** 2) == pytest.approx(mahalanobis_sq(S @ z + off, s), rel=1e-10)


def test_summary_arrays_are_read_only():
    s = GaussianSummary.from_moments([0.0], [[1.0]])
    with pytest.raises(ValueError):
        s.mean[0] = 1.0


@pytest.mark.parametrize("d, r, expected", [(3.0, 4.0, 0.0), (4.0, 4.0, 0.0), (6.5, 4.0, 2.5)])
def test_hinge_penalty(d, r, expected):
    assert hinge_penalty(d, r) == expected


def test_hankel_scalar():
    H = hankel(2, [1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(H.data, [[1, 2, 3], [2, 3, 4]])
    assert H.n_cols == 3


def test_hankel_vector_samples_block_rows():
    samples = np.arange(10.0).reshape(5, 2)
    H = hankel(3, samples)
    assert H.data.shape == (6, 3)
    np.testing.assert_array_equal(H.block_row(1), samples[1:4].T)
    np.testing.assert_array_equal(H.rows(0, 2)[:, 0], samples[:2].ravel())


@given(st.integers(1, 6), st.integers(0, 10))
def test_hankel_shape_and_constant_antidiagonals(depth, extra):
    x = np.arange(depth + extra, dtype=float)
    H = hankel(depth, x)
    assert H.data.shape == (depth, extra + 1)
    for i in range(depth):
        for j in range(extra + 1):
            assert H.data[i, j] == x[i + j]


def test_hankel_too_short():
    with pytest.raises(InputError):
        hankel(5, [1.0, 2.0])


def test_empirical_summary_one_over_n():
    C = np.array([[1.0, 2.0, 3.0, 6.0], [0.0, 1.0, 0.0, 1.0]])
    s = empirical_summary(C)
    centered = C - C.mean(axis=1, keepdims=True)
    np.testing.assert_allclose(s.covariance, centered @ centered.T / 4)
    np.testing.assert_allclose(s.mean, [3.0, 0.5])


def test_empirical_summary_rank_deficient_needs_ridge():
    C = np.vstack([np.arange(5.0), 2 * np.arange(5.0)])
    with pytest.raises(NumericalError, match="ridge"):
        empirical_summary(C)
    s = empirical_summary(C, ridge=scaled_ridge(C, 1e-6))
    assert np.all(np.linalg.eigvalsh(s.covariance) > 0)


@given(arrays(float, (3, 8), elements=finite))
def test_scaled_ridge_is_trace_fraction(C):
    centered = C - C.mean(axis=1, keepdims=True)
    cov = centered @ centered.T / 8
    assert scaled_ridge(C, 0.1) == pytest.approx(0.1 * np.trace(cov) / 3, abs=1e-12)


def test_full_row_rank():
    assert full_row_rank(np.eye(2, 3))[0]
    assert not full_row_rank(np.ones((2, 3)))[0]
    assert not full_row_rank(np.ones((3, 2)))[0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mahalanobis_invariant_under_linear_change_of_coordinates(seed):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(3, 40))
    M = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    x = rng.normal(size=3)
    d0 = mahalanobis_sq(x, empirical_summary(C))
    d1 = mahalanobis_sq(M @ x, empirical_summary(M @ C))
    assert d1 == pytest.approx(d0, rel=1e-8)


def test_radius_increases_with_confidence_and_dof():
    confs = [0.5, 0.8, 0.9, 0.95, 0.99]
    grid = np.array([[chi2_confidence_radius(k, c) for c in confs] for k in range(1, 11)])
    assert np.all(np.diff(grid, axis=0) > 0)
    assert np.all(np.diff(grid, axis=1) > 0)


@pytest.mark.parametrize("s", [0.5, 1.0, 3.0, 12.5, 40.0])
def test_lower_gamma_tends_to_one(s):
    assert regularized_lower_gamma(s, 50 * s) > 1 - 1e-9


def test_hankel_full_depth_is_single_column():
    H = hankel(4, [1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(H.data, [[1], [2], [3], [4]])


def test_hankel_block_shift_is_exact():
    rng = np.random.default_rng(0)
    samples = rng.normal(size=(5, 2))
    H = hankel(3, samples).data
    # moving down one block row equals moving right one column
    assert np.array_equal(H[2:, :-1], H[:-2, 1:])


def test_empirical_summary_constant_columns():
    v = np.array([1.0, -2.0, 3.0])
    s = empirical_summary(np.tile(v[:, None], 6), ridge=1e-3)
    np.testing.assert_array_equal(s.mean, v)
    np.testing.assert_allclose(s.covariance, 1e-3 * np.eye(3), atol=1e-18)


def test_empirical_summary_two_points():
    s = empirical_summary([[-1.0, 1.0]])
    assert s.mean[0] == 0.0
    assert s.covariance[0, 0] == 1.0


def test_empirical_summary_matches_outer_product_sum():
    rng = np.random.default_rng(11)
    C = rng.normal(size=(3, 50))
    s = empirical_summary(C, ridge=1e-6)
    mu = sum(C[:, j] for j in range(50)) / 50
    cov = sum(np.outer(C[:, j] - mu, C[:, j] - mu) for j in range(50)) / 50 + 1e-6 * np.eye(3)
    np.testing.assert_allclose(s.covariance, cov, atol=1e-12)


@given(st.floats(1e-6, 10.0))
def test_ridge_shifts_covariance_by_identity(eps):
    C = np.random.default_rng(5).normal(size=(2, 12))
    diff = empirical_summary(C, eps).covariance - empirical_summary(C).covariance
    np.testing.assert_allclose(diff, eps * np.eye(2), atol=1e-12)


def test_duplicated_row_is_rank_deficient():
    D = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
    full, smallest = full_row_rank(D)
    assert not full and smallest < 1e-10
    assert full_row_rank(np.eye(3))[0]
