"""Indirect data-conforming MPC.

A linear model is fitted to recorded state/input data, pre-stabilized with an
LQR gain ``K``, and a finite-horizon problem is solved over the open-loop
corrections ``u~_k`` and the predicted states. The applied input is
``u_k = K x_k + u~_k``. With ``gamma > 0`` each predicted pair ``(x_k, u_k)``
is penalized by its squared Mahalanobis distance to the recorded pairs,
either everywhere (quadratic) or only outside a chi-squared confidence set
(hinge).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .constraints import Polyhedron
from .exceptions import InputError, SolverFailure
from .solver import CompositeProblem, HingeTerm, solve
from .stats import chi2_confidence_radius, empirical_summary, mahalanobis_sq, scaled_ridge
from .sysid import fit_linear_model, lqr_gain, spectral_radius

__all__ = ["MPCConfig", "build_mpc_problem", "MPCController", "pair_summary", "DEFAULT_RIDGE_SCALE"]

DEFAULT_RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class MPCConfig:
    """Horizon, weights, constraint sets and regularizer of the MPC problem.

    ``X_terminal`` defaults to ``X``. ``summary`` is the Gaussian summary of
    stacked ``(x, u)`` pairs; it is only needed when ``gamma > 0`` and
    :meth:`MPCController.from_data` fills it in from the data.
    """

    N: int = 8
    Q: np.ndarray = 1.0
    R: np.ndarray = 1.0
    gamma: float = 0.0
    regularizer: str = "quadratic"
    confidence: float = 0.95
    X: Polyhedron = None
    U: Polyhedron = None
    X_terminal: Polyhedron = None
    summary: object = None

    def __post_init__(self):
        if int(self.N) < 1:
            raise InputError("horizon N must be positive")
        if self.regularizer not in ("quadratic", "hinge"):
            raise InputError("regularizer must be 'quadratic' or 'hinge'")
        if self.gamma < 0:
            raise InputError("gamma must be nonnegative")
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -1e-10:
            raise InputError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(0.5 * (R + R.T)).min() < 1e-10:
            raise InputError("R must be positive definite")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)


def pair_summary(X, U, ridge_scale=DEFAULT_RIDGE_SCALE):
    """Gaussian summary of the stacked state/input columns ``[X; U]``."""
    D = np.vstack([np.atleast_2d(X), np.atleast_2d(U)])
    ridge = scaled_ridge(D, ridge_scale)
    return empirical_summary(D, ridge if ridge > 0 else ridge_scale)


def _trajectory_maps(A_cl, B, K, x0, N):
    """Affine maps from ``z = (u~, x_1..x_N)`` to stacked states and inputs.

    Returns ``(Mx, mx, Mu, mu)`` with ``col(x_0..x_N) = Mx z + mx`` and
    ``col(u_0..u_{N-1}) = Mu z + mu``.
    """
    nx, nu = B.shape
    nz = N * nu + N * nx
    Mx = np.zeros(((N + 1) * nx, nz))
    mx = np.zeros((N + 1) * nx)
    mx[:nx] = x0
    for k in range(1, N + 1):
        Mx[k * nx:(k + 1) * nx, N * nu + (k - 1) * nx:N * nu + k * nx] = np.eye(nx)
    Mu = np.zeros((N * nu, nz))
    mu = np.zeros(N * nu)
    for k in range(N):
        rows = slice(k * nu, (k + 1) * nu)
        Mu[rows, k * nu:(k + 1) * nu] = np.eye(nu)
        Mu[rows] += K @ Mx[k * nx:(k + 1) * nx]
        mu[rows] = K @ mx[k * nx:(k + 1) * nx]
    return Mx, mx, Mu, mu


def build_mpc_problem(model, K, x0, config):
    """Composite program over ``z = (u~_0..u~_{N-1}, x_1..x_N)``.

    Parameters
    ----------
    model : LinearModel
        Identified ``(A, B)``.
    K : array_like, shape (r_u, r_x)
        Pre-stabilizing gain; ``A + B K`` must be Schur stable.
    x0 : array_like
        Current state.
    config : MPCConfig

    Notes
    -----
    Dynamics are ``x_{k+1} = (A + B K) x_k + B u~_k``. The physical inputs
    ``u_k = K x_k + u~_k`` are constrained for ``k = 0 .. N-1``, the states
    for ``k = 1 .. N-1`` and ``x_N`` by the terminal set.
    """
    A, B = np.atleast_2d(model.A), np.atleast_2d(model.B)
    nx, nu = B.shape
    K = np.asarray(K, dtype=float).reshape(nu, nx)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != nx or not np.all(np.isfinite(x0)):
        raise InputError(f"x0 must be a finite vector of length {nx}")
    if config.Q.shape != (nx, nx) or config.R.shape != (nu, nu):
        raise InputError("Q and R do not match the model dimensions")
    A_cl = A + B @ K
    if spectral_radius(A_cl) >= 1.0:
        raise InputError("K does not stabilize the identified model")
    N = config.N
    Mx, mx, Mu, mu = _trajectory_maps(A_cl, B, K, x0, N)
    nz = Mx.shape[1]

    Qbig = np.kron(np.eye(N + 1), config.Q)
    Rbig = np.kron(np.eye(N), config.R)
    P = 2.0 * (Mx.T @ Qbig @ Mx + Mu.T @ Rbig @ Mu)
    q = 2.0 * (Mx.T @ Qbig @ mx + Mu.T @ Rbig @ mu)
    c = float(mx @ Qbig @ mx + mu @ Rbig @ mu)

    hinges = []
    if config.gamma > 0:
        summary = config.summary
        if summary is None:
            raise InputError("a data summary is required when gamma > 0")
        if summary.dim != nx + nu:
            raise InputError(f"summary dimension {summary.dim} != r_x + r_u = {nx + nu}")
        radius = (chi2_confidence_radius(nx + nu, config.confidence)
                  if config.regularizer == "hinge" else None)
        for k in range(N):
            S = np.vstack([Mx[k * nx:(k + 1) * nx], Mu[k * nu:(k + 1) * nu]])
            s = np.concatenate([mx[k * nx:(k + 1) * nx], mu[k * nu:(k + 1) * nu]])
            if radius is None:
                W, w = summary.whiten(S, s)
                P = P + 2.0 * config.gamma * (W.T @ W)
                q = q + 2.0 * config.gamma * (W.T @ w)
                c += config.gamma * float(w @ w)
            else:
                hinges.append(HingeTerm(config.gamma, summary, S, s, radius))

    A_eq = np.zeros((N * nx, nz))
    b_eq = np.zeros(N * nx)
    for k in range(N):
        rows = slice(k * nx, (k + 1) * nx)
        A_eq[rows] = Mx[(k + 1) * nx:(k + 2) * nx] - A_cl @ Mx[k * nx:(k + 1) * nx]
        A_eq[rows, k * nu:(k + 1) * nu] -= B
        b_eq[rows] = A_cl @ mx[k * nx:(k + 1) * nx] - mx[(k + 1) * nx:(k + 2) * nx]

    rows, rhs = [], []

    def add(poly, M, m):
        if poly is not None and poly.H.size:
            rows.append(poly.H @ M)
            rhs.append(poly.h - poly.H @ m)

    for k in range(N):
        add(config.U, Mu[k * nu:(k + 1) * nu], mu[k * nu:(k + 1) * nu])
    for k in range(1, N):
        add(config.X, Mx[k * nx:(k + 1) * nx], mx[k * nx:(k + 1) * nx])
    terminal = config.X_terminal if config.X_terminal is not None else config.X
    add(terminal, Mx[N * nx:], mx[N * nx:])
    A_in = np.vstack(rows) if rows else None
    b_in = np.concatenate(rhs) if rhs else None
    return CompositeProblem(P, q, c, (), tuple(hinges), A_eq, b_eq, A_in, b_in)


def unpack(z, x0, K, N, nx, nu):
    """Split a solution into predicted states ``(N+1, r_x)`` and inputs ``(N, r_u)``."""
    z = np.asarray(z, dtype=float)
    u_tilde = z[:N * nu].reshape(N, nu)
    xs = np.vstack([np.asarray(x0, dtype=float).reshape(1, nx), z[N * nu:].reshape(N, nx)])
    us = xs[:-1] @ np.asarray(K).reshape(nu, nx).T + u_tilde
    return xs, us


@dataclass
class MPCController:
    """Receding-horizon loop for the data-conforming MPC.

    Call with the current state to get the applied input ``u_0``.
    """

    model: object
    K: np.ndarray
    config: MPCConfig
    solver_options: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        self._t = 0
        self._z = None

    @classmethod
    def from_data(cls, X, U, config, lqr_Q=None, lqr_R=None, ridge_scale=DEFAULT_RIDGE_SCALE,
                  **kwargs):
        """Identify ``(A, B)`` from state/input records and synthesize ``K``.

        ``X`` and ``U`` are ``(T + 1, r)`` sample arrays (or 1-D for scalars).
        The fit uses consecutive pairs; the pair summary uses every sample.
        When ``gamma > 0`` and ``config.summary`` is unset, it is filled in.
        """
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        X = X[:, None] if X.ndim == 1 else X
        U = U[:, None] if U.ndim == 1 else U
        if len(X) != len(U):
            raise InputError("state and input records must have the same length")
        model = fit_linear_model(X[:-1].T, U[:-1].T, X[1:].T)
        Qk = config.Q if lqr_Q is None else lqr_Q
        Rk = config.R if lqr_R is None else lqr_R
        K, _, _ = lqr_gain(model.A, model.B, Qk, Rk)
        if config.summary is None:
            summary = pair_summary(X.T, U.T, ridge_scale)
            config = dataclasses.replace(config, summary=summary)
        return cls(model, K, config, **kwargs)

    def mpc_step(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        t = self._t
        self._t += 1
        problem = build_mpc_problem(self.model, self.K, x, self.config)
        result = solve(problem, **self.solver_options)
        if result.status == "infeasible_detected" or not np.all(np.isfinite(result.solution)):
            raise SolverFailure(f"MPC problem could not be solved ({result.status})",
                                step=t, result=result)
        nx, nu = self.model.B.shape
        xs, us = unpack(result.solution, x, self.K, self.config.N, nx, nu)
        record = {"step": t, "objective": result.objective, "status": result.status,
                  "iterations": result.iterations}
        if self.config.summary is not None:
            record["mean_pair_distance"] = float(np.mean(
                [mahalanobis_sq(np.concatenate([xs[k], us[k]]), self.config.summary)
                 for k in range(self.config.N)]))
        self.diagnostics.append(record)
        return us[0].copy()

    __call__ = mpc_step
