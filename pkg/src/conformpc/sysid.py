"""Least-squares identification of ``(A, B)`` and discrete-time LQR synthesis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, NumericalError
from .stats import full_row_rank

__all__ = ["LinearModel", "fit_linear_model", "solve_dare", "lqr_gain", "spectral_radius"]


@dataclass(frozen=True)
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    residual_norm: float = 0.0

    @property
    def state_dim(self):
        return self.A.shape[0]

    @property
    def input_dim(self):
        return self.B.shape[1]


def fit_linear_model(X0, U0, X1):
    """Fit ``X1 ~ A X0 + B U0`` in the Frobenius norm.

    Columns are samples. The fit uses a QR factorization of the stacked
    regressor ``[X0; U0]^T``, which must have full row rank.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    U0 = np.atleast_2d(np.asarray(U0, dtype=float))
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    nx, nu = X0.shape[0], U0.shape[0]
    if not (X0.shape[1] == U0.shape[1] == X1.shape[1]):
        raise InputError("X0, U0 and X1 must have the same number of columns")
    if X1.shape[0] != nx:
        raise InputError("X1 must have as many rows as X0")
    Z = np.vstack([X0, U0])
    full, smallest = full_row_rank(Z)
    if not full:
        rank = np.linalg.matrix_rank(Z)
        raise InputError(
            f"regressor [X0; U0] has rank {rank} < {nx + nu} "
            f"(smallest singular value {smallest:.3e})")
    Qf, Rf = np.linalg.qr(Z.T)
    theta = np.linalg.solve(Rf, Qf.T @ X1.T)  # (nx+nu) x nx
    AB = theta.T
    resid = X1 - AB @ Z
    return LinearModel(AB[:, :nx], AB[:, nx:], float(np.linalg.norm(resid)))


def _dare_map(P, A, B, Q, R):
    BtPA = B.T @ P @ A
    G = R + B.T @ P @ B
    return Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(G, BtPA)


def solve_dare(A, B, Q, R, tol=1e-12, max_iter=100_000):
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Iterates the Riccati map from ``P = Q`` (symmetrizing every step) until two
    successive iterates differ by less than ``tol`` in max-abs norm.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = 0.5 * (Q + Q.T)
    diff = np.inf
    for _ in range(int(max_iter)):
        with np.errstate(over="ignore", invalid="ignore"):
            P_next = _dare_map(P, A, B, Q, R)
            P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            break
        diff = np.max(np.abs(P_next - P))
        P = P_next
        if diff < tol * max(1.0, np.max(np.abs(P))):
            return P
    raise NumericalError(
        f"Riccati iteration did not converge (last change {diff:.3e}); "
        "(A, B) may not be stabilizable", residual=diff)


def spectral_radius(M):
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


def lqr_gain(A, B, Q, R, **dare_kwargs):
    """Infinite-horizon LQR gain ``K`` for the policy ``u = K x``.

    Returns ``(K, P, rho)`` where ``rho`` is the spectral radius of ``A + B K``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = solve_dare(A, B, Q, R, **dare_kwargs)
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    rho = spectral_radius(A + B @ K)
    if rho >= 1.0:
        raise NumericalError(f"synthesized gain is not stabilizing (spectral radius {rho:.6f})",
                             residual=rho)
    return K, P, rho
