"""Gaussian summaries of data, Mahalanobis distances and Hankel matrices.

The routines here are the statistical and structural building blocks of the
data-conforming controllers: empirical mean/covariance summaries with a
Cholesky factor, squared Mahalanobis distances evaluated through triangular
solves, chi-squared confidence radii, and block-Hankel data matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import InputError, NumericalError

__all__ = [
    "GaussianSummary",
    "HankelBlock",
    "mahalanobis_sq",
    "chi2_confidence_radius",
    "regularized_lower_gamma",
    "hinge_penalty",
    "hankel",
    "empirical_summary",
    "scaled_ridge",
    "full_row_rank",
]

_EPS = np.finfo(float).eps
_TINY = 1e-300


@dataclass(frozen=True)
class GaussianSummary:
    """Mean and covariance of a data cloud, plus the covariance's Cholesky factor.

    ``factor`` is lower triangular with ``factor @ factor.T == covariance``.
    ``ridge`` records the multiple of the identity that was added to the
    sample covariance when the summary was built.
    """

    mean: np.ndarray
    covariance: np.ndarray
    factor: np.ndarray = field(repr=False)
    ridge: float = 0.0

    @classmethod
    def from_moments(cls, mean, covariance, ridge=0.0):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise InputError(
                f"covariance shape {cov.shape} does not match mean length {mean.size}")
        cov = 0.5 * (cov + cov.T)
        try:
            factor = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                "covariance is not positive definite; use a positive ridge") from exc
        diag = np.abs(np.diag(factor))
        if diag.min() <= 1e-7 * max(diag.max(), 1e-300):
            # roundoff can let a singular matrix through the factorization
            raise NumericalError("covariance is numerically singular; use a positive ridge")
        for arr in (mean, cov, factor):
            arr.setflags(write=False)
        return cls(mean, cov, factor, float(ridge))

    @property
    def dim(self):
        return self.mean.size

    def whiten(self, S, s=None):
        """Return ``(W, w)`` with ``d_M^2(S z + s) == ||W z + w||^2`` for all ``z``."""
        S = np.atleast_2d(np.asarray(S, dtype=float))
        if S.shape[0] != self.dim:
            raise InputError(f"map has {S.shape[0]} rows, summary dimension is {self.dim}")
        s = np.zeros(self.dim) if s is None else np.asarray(s, dtype=float).reshape(self.dim)
        W = solve_triangular(self.factor, S, lower=True)
        w = solve_triangular(self.factor, s - self.mean, lower=True)
        return W, w


@dataclass(frozen=True)
class HankelBlock:
    """Block-Hankel matrix with ``depth`` block rows of height ``block_size``."""

    depth: int
    block_size: int
    data: np.ndarray

    @property
    def n_cols(self):
        return self.data.shape[1]

    def block_row(self, i):
        r = self.block_size
        return self.data[i * r:(i + 1) * r]

    def rows(self, start, stop):
        """Stack of block rows ``start .. stop-1``."""
        r = self.block_size
        return self.data[start * r:stop * r]


def mahalanobis_sq(point, summary):
    """Squared Mahalanobis distance of ``point`` to ``summary``.

    Evaluated as ``||L^{-1}(x - mu)||^2`` with the stored Cholesky factor.

    >>> s = GaussianSummary.from_moments([0.0, 0.0], np.diag([4.0, 1.0]))
    >>> float(mahalanobis_sq([2.0, 0.0], s))
    1.0
    """
    x = np.atleast_1d(np.asarray(point, dtype=float))
    if x.shape != summary.mean.shape:
        raise InputError(
            f"point has shape {x.shape}, summary dimension is {summary.dim}")
    z = solve_triangular(summary.factor, x - summary.mean, lower=True)
    return float(z @ z)


def _lower_gamma_series(s, x, tol, max_iter):
    term = 1.0 / s
    total = term
    a = s
    for _ in range(max_iter):
        a += 1.0
        term *= x / a
        total += term
        if abs(term) < abs(total) * tol:
            break
    return total * math.exp(-x + s * math.log(x) - math.lgamma(s))


def _upper_gamma_fraction(s, x, tol, max_iter):
    # modified Lentz evaluation of the continued fraction for Q(s, x)
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            break
    return math.exp(-x + s * math.log(x) - math.lgamma(s)) * h


def regularized_lower_gamma(s, x, tol=1e-15, max_iter=10_000):
    """Regularized lower incomplete gamma function ``P(s, x)``.

    Uses the power series below ``x = s + 1`` and the continued fraction for the
    complement above it.
    """
    s = float(s)
    x = float(x)
    if not s > 0:
        raise InputError(f"shape parameter must be positive, got {s}")
    if x < 0:
        raise InputError(f"argument must be nonnegative, got {x}")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < s + 1.0:
        p = _lower_gamma_series(s, x, tol, max_iter)
    else:
        p = 1.0 - _upper_gamma_fraction(s, x, tol, max_iter)
    return min(1.0, max(0.0, p))


def chi2_cdf(d, dof):
    """CDF of the chi-squared distribution with ``dof`` degrees of freedom."""
    return regularized_lower_gamma(0.5 * dof, 0.5 * d)


def chi2_confidence_radius(dof, confidence, tol=1e-9, max_iter=500):
    """Squared radius ``d*`` of the chi-squared confidence set.

    Returns ``d*`` such that ``confidence == P(dof/2, d*/2)``; the set
    ``{x : d_M^2(x) <= d*}`` then holds the requested probability mass.
    The root is bracketed (upper end doubled from ``dof``) and bisected.

    >>> round(chi2_confidence_radius(2, 0.95), 5)
    5.99146
    """
    if int(dof) != dof or dof < 1:
        raise InputError(f"degrees of freedom must be a positive integer, got {dof}")
    if not 0.0 < confidence < 1.0:
        raise InputError(f"confidence must lie in (0, 1), got {confidence}")
    lo, hi = 0.0, float(dof)
    doublings = 0
    while chi2_cdf(hi, dof) < confidence:
        lo, hi = hi, 2.0 * hi
        doublings += 1
        if doublings > 1100:
            raise NumericalError("could not bracket the confidence radius")
    mid = 0.5 * (lo + hi)
    resid = chi2_cdf(mid, dof) - confidence
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        resid = chi2_cdf(mid, dof) - confidence
        if resid < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * _EPS * hi:
            break
    if abs(resid) > tol:
        raise NumericalError(
            f"bisection stopped with CDF residual {resid:.3e}", residual=abs(resid))
    return mid


def hinge_penalty(d_sq, radius):
    """``max(0, d_sq - radius)``: zero inside the confidence set."""
    return max(0.0, float(d_sq) - float(radius))


def _as_samples(samples):
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InputError("samples must be a sequence of scalars or vectors")
    return arr


def hankel(depth, samples):
    """Block-Hankel matrix of a sample sequence.

    Column ``j`` stacks samples ``j, j+1, ..., j+depth-1``; there are
    ``len(samples) - depth + 1`` columns.

    Parameters
    ----------
    depth : int
        Number of block rows.
    samples : array_like, shape (n_samples,) or (n_samples, r)
        The sequence, one sample per row.
    """
    arr = _as_samples(samples)
    n, r = arr.shape
    depth = int(depth)
    if depth < 1:
        raise InputError(f"depth must be positive, got {depth}")
    if n < depth:
        raise InputError(f"need at least {depth} samples for depth {depth}, got {n}")
    windows = np.lib.stride_tricks.sliding_window_view(arr, depth, axis=0)
    # windows: (n_cols, r, depth) -> (depth, r, n_cols)
    data = np.ascontiguousarray(windows.transpose(2, 1, 0)).reshape(depth * r, n - depth + 1)
    data.setflags(write=False)
    return HankelBlock(depth, r, data)


def scaled_ridge(columns, factor):
    """``factor * trace(cov) / dim`` for the (1/n normalized) covariance of ``columns``."""
    C = np.atleast_2d(np.asarray(columns, dtype=float))
    centered = C - C.mean(axis=1, keepdims=True)
    return float(factor) * float(np.sum(centered * centered)) / C.shape[1] / C.shape[0]


def empirical_summary(columns, ridge=0.0):
    """Gaussian summary of the columns of an ``r x n`` matrix.

    The covariance is normalized by the number of columns ``n`` and ``ridge``
    times the identity is added to it.
    """
    C = np.atleast_2d(np.asarray(columns, dtype=float))
    r, n = C.shape
    if n < 2:
        raise InputError(f"need at least two columns, got {n}")
    if ridge < 0:
        raise InputError(f"ridge must be nonnegative, got {ridge}")
    mu = C.mean(axis=1)
    centered = C - mu[:, None]
    cov = centered @ centered.T / n + ridge * np.eye(r)
    try:
        return GaussianSummary.from_moments(mu, cov, ridge)
    except NumericalError as exc:
        raise NumericalError(
            "sample covariance is singular (rank-deficient data); "
            "build the summary with a positive ridge") from exc


def full_row_rank(D, tol=1e-10):
    """Check full row rank through the singular values.

    Returns ``(is_full, smallest_singular_value)``; the matrix is full row rank
    when it has at least as many columns as rows and its smallest singular
    value exceeds ``tol`` times the largest.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    m, n = D.shape
    sv = np.linalg.svd(D, compute_uv=False)
    if m > n:
        return False, 0.0
    smallest = float(sv[-1])
    return bool(smallest > tol * sv[0]), smallest
