"""Data-enabled predictive control with an optional Mahalanobis regularizer.

The decision vector is the Hankel combination ``g``; predicted inputs
``u = U_f g``, outputs ``y = Y_f g`` and the initial-condition slack
``rho = Y_p g - y_ini`` are affine in ``g`` and never appear as separate
variables. With ``gamma > 0`` every window ``Psi_k`` of the ``T_ini`` most
recent input/output samples along the prediction is pulled toward the
distribution of the same windows in the recorded data, either quadratically
or only outside a chi-squared confidence set.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .constraints import Polyhedron
from .exceptions import InputError, SolverFailure
from .solver import CompositeProblem, HingeTerm, L1Term, solve
from .stats import (GaussianSummary, chi2_confidence_radius, empirical_summary, hankel,
                    mahalanobis_sq, scaled_ridge)

__all__ = [
    "DeePCData",
    "DeePCConfig",
    "IniWindow",
    "DeePCController",
    "build_deepc_data",
    "psi_map",
    "build_deepc_problem",
]

REGULARIZERS = ("quadratic", "hinge")
DEFAULT_EPSILON_SCALE = 1e-6


@dataclass(frozen=True)
class DeePCData:
    U_p: np.ndarray
    Y_p: np.ndarray
    U_f: np.ndarray
    Y_f: np.ndarray
    surrogate_summary: GaussianSummary
    T_ini: int
    N: int
    r_u: int
    r_y: int

    @property
    def n_cols(self):
        return self.U_p.shape[1]

    @property
    def psi_dim(self):
        return (self.r_u + self.r_y) * self.T_ini


def _samples(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def build_deepc_data(U_d, Y_d, T_ini, N, epsilon=None, epsilon_scale=DEFAULT_EPSILON_SCALE):
    """Partition recorded data into past/future Hankel blocks.

    Parameters
    ----------
    U_d, Y_d : array_like, shape (T + 1,) or (T + 1, r)
        Recorded inputs and outputs, one sample per row.
    T_ini, N : int
        Initial-condition window and prediction horizon.
    epsilon : float, optional
        Ridge added to the surrogate-state covariance. Defaults to
        ``epsilon_scale * trace(cov) / dim``.

    Notes
    -----
    The input Hankel has depth ``T_ini + N`` and the output Hankel depth
    ``T_ini + N + 1`` (the cost weighs ``y_N``); both keep their first
    ``T + 1 - T_ini - N`` columns. The surrogate summary covers every window of
    ``T_ini`` consecutive samples.
    """
    U = _samples(U_d)
    Y = _samples(Y_d)
    T_ini, N = int(T_ini), int(N)
    if T_ini < 1 or N < 1:
        raise InputError("T_ini and N must be positive")
    if len(U) != len(Y):
        raise InputError("input and output records must have the same length")
    if len(U) < T_ini + N + 1:
        raise InputError(
            f"need at least T_ini + N + 1 = {T_ini + N + 1} samples, got {len(U)}")
    r_u, r_y = U.shape[1], Y.shape[1]
    HU = hankel(T_ini + N, U)
    HY = hankel(T_ini + N + 1, Y)
    nc = HY.n_cols
    Hu = HU.data[:, :nc]
    Hy = HY.data[:, :nc]
    windows = np.vstack([hankel(T_ini, U).data, hankel(T_ini, Y).data])
    if epsilon is None:
        epsilon = scaled_ridge(windows, epsilon_scale)
        if epsilon == 0.0:
            epsilon = epsilon_scale
    summary = empirical_summary(windows, epsilon)
    return DeePCData(Hu[:T_ini * r_u], Hy[:T_ini * r_y], Hu[T_ini * r_u:], Hy[T_ini * r_y:],
                     summary, T_ini, N, r_u, r_y)


@dataclass(frozen=True)
class DeePCConfig:
    Q_y: np.ndarray = 1.0
    R: np.ndarray = 2.0
    lambda_g: float = 1.0
    lambda_rho: float = 1.0
    gamma: float = 0.0
    regularizer: str = "quadratic"
    confidence: float = 0.95
    U: Polyhedron = None
    Y: Polyhedron = None

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise InputError(f"regularizer must be one of {REGULARIZERS}")
        for name in ("lambda_g", "lambda_rho", "gamma"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be nonnegative")
        Q = np.atleast_2d(np.asarray(self.Q_y, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -1e-10:
            raise InputError("Q_y must be positive semidefinite")
        if np.linalg.eigvalsh(0.5 * (R + R.T)).min() < 1e-10:
            raise InputError("R must be positive definite")
        object.__setattr__(self, "Q_y", Q)
        object.__setattr__(self, "R", R)


class IniWindow:
    """The ``T_ini`` most recent input/output pairs, oldest first."""

    def __init__(self, T_ini, r_u=1, r_y=1):
        self.T_ini = int(T_ini)
        self.r_u, self.r_y = r_u, r_y
        self._u = deque(maxlen=self.T_ini)
        self._y = deque(maxlen=self.T_ini)

    def push(self, u, y):
        self._u.append(np.atleast_1d(np.asarray(u, dtype=float)).reshape(self.r_u))
        self._y.append(np.atleast_1d(np.asarray(y, dtype=float)).reshape(self.r_y))

    @property
    def ready(self):
        return len(self._u) == self.T_ini

    def __len__(self):
        return len(self._u)

    @property
    def u_ini(self):
        return np.concatenate(self._u) if self._u else np.zeros(0)

    @property
    def y_ini(self):
        return np.concatenate(self._y) if self._y else np.zeros(0)

    @classmethod
    def from_vectors(cls, u_ini, y_ini, r_u=1, r_y=1):
        u = np.asarray(u_ini, dtype=float).reshape(-1, r_u)
        y = np.asarray(y_ini, dtype=float).reshape(-1, r_y)
        win = cls(len(u), r_u, r_y)
        for uk, yk in zip(u, y):
            win.push(uk, yk)
        return win


def psi_map(k, T_ini, N, r_u=1, r_y=1):
    """0/1 selector ``S_k`` with ``Psi_k = S_k @ col(u_ini, y_ini, u, y)``.

    ``Psi_k`` stacks the inputs of times ``k-T_ini+1 .. k`` followed by the
    outputs of the same times; negative times come from the ini window. ``u``
    holds ``N`` and ``y`` holds ``N + 1`` samples.
    """
    if not 0 <= k < N:
        raise InputError(f"k must lie in [0, {N}), got {k}")
    off_yini = T_ini * r_u
    off_u = off_yini + T_ini * r_y
    off_y = off_u + N * r_u
    total = off_y + (N + 1) * r_y
    S = np.zeros(((r_u + r_y) * T_ini, total))
    row = 0
    times = range(k - T_ini + 1, k + 1)
    for tau in times:
        start = (T_ini + tau) * r_u if tau < 0 else off_u + tau * r_u
        for i in range(r_u):
            S[row, start + i] = 1.0
            row += 1
    for tau in times:
        start = off_yini + (T_ini + tau) * r_y if tau < 0 else off_y + tau * r_y
        for i in range(r_y):
            S[row, start + i] = 1.0
            row += 1
    return S


def _psi_affine(data, u_ini, y_ini):
    """``(E, e)`` with ``col(u_ini, y_ini, u, y) = E g + e``."""
    n = data.n_cols
    E = np.vstack([np.zeros((u_ini.size + y_ini.size, n)), data.U_f, data.Y_f])
    e = np.concatenate([u_ini, y_ini, np.zeros(data.U_f.shape[0] + data.Y_f.shape[0])])
    return E, e


def build_deepc_problem(data, config, ini):
    """Composite program in ``g`` for the current ini window.

    With ``config.gamma == 0`` this is plain DeePC; otherwise the quadratic
    regularizer is folded into the quadratic part and the hinge regularizer
    becomes one hinge term per prediction step.
    """
    u_ini, y_ini = ini.u_ini, ini.y_ini
    if u_ini.size != data.U_p.shape[0] or y_ini.size != data.Y_p.shape[0]:
        raise InputError("ini window does not match the data dimensions")
    Q, R = config.Q_y, config.R
    if Q.shape != (data.r_y, data.r_y) or R.shape != (data.r_u, data.r_u):
        raise InputError("weight matrices do not match the data dimensions")
    n = data.n_cols
    Qbig = np.kron(np.eye(data.N + 1), Q)
    Rbig = np.kron(np.eye(data.N), R)
    P = 2.0 * (data.Y_f.T @ Qbig @ data.Y_f + data.U_f.T @ Rbig @ data.U_f)
    q = np.zeros(n)
    c = 0.0
    l1 = []
    if config.lambda_g > 0:
        l1.append(L1Term(config.lambda_g, np.eye(n)))
    if config.lambda_rho > 0:
        l1.append(L1Term(config.lambda_rho, data.Y_p, -y_ini))
    hinges = []
    if config.gamma > 0:
        E, e = _psi_affine(data, u_ini, y_ini)
        summary = data.surrogate_summary
        radius = None
        for k in range(data.N):
            S = psi_map(k, data.T_ini, data.N, data.r_u, data.r_y)
            SE, se = S @ E, S @ e
            if config.regularizer == "quadratic":
                W, w = summary.whiten(SE, se)
                P = P + 2.0 * config.gamma * (W.T @ W)
                q = q + 2.0 * config.gamma * (W.T @ w)
                c += config.gamma * float(w @ w)
            else:
                if radius is None:
                    radius = chi2_confidence_radius(data.psi_dim, config.confidence)
                hinges.append(HingeTerm(config.gamma, summary, SE, se, radius))
    rows, rhs = [], []
    if config.U is not None and config.U.H.size:
        for k in range(data.N):
            blk = data.U_f[k * data.r_u:(k + 1) * data.r_u]
            rows.append(config.U.H @ blk)
            rhs.append(config.U.h)
    if config.Y is not None and config.Y.H.size:
        for k in range(data.N + 1):
            blk = data.Y_f[k * data.r_y:(k + 1) * data.r_y]
            rows.append(config.Y.H @ blk)
            rhs.append(config.Y.h)
    A_in = np.vstack(rows) if rows else None
    b_in = np.concatenate(rhs) if rhs else None
    return CompositeProblem(P, q, c, tuple(l1), tuple(hinges), data.U_p, u_ini, A_in, b_in)


def predict(data, g, ini):
    """Predicted ``(u, y, rho)`` for a candidate ``g``."""
    g = np.asarray(g, dtype=float)
    return data.U_f @ g, data.Y_f @ g, data.Y_p @ g - ini.y_ini


def psi_distances(data, g, ini):
    """``d_M^2(Psi_k)`` for ``k = 0 .. N-1`` under the surrogate summary."""
    u, y, _ = predict(data, g, ini)
    stacked = np.concatenate([ini.u_ini, ini.y_ini, u, y])
    return np.array([mahalanobis_sq(psi_map(k, data.T_ini, data.N, data.r_u, data.r_y) @ stacked,
                                    data.surrogate_summary) for k in range(data.N)])


@dataclass
class DeePCController:
    """Receding-horizon DeePC loop.

    Call the controller with each new measurement ``y_t``; it returns the
    input to apply. The first ``T_ini`` calls return zero while the ini window
    fills. Afterwards each call solves the problem for the window of pairs
    ``t-T_ini .. t-1``, applies the first predicted input and then stores
    ``(u_t, y_t)``.
    """

    data: DeePCData
    config: DeePCConfig
    solver_options: dict = field(default_factory=dict)
    warm_start: bool = True
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        self.ini = IniWindow(self.data.T_ini, self.data.r_u, self.data.r_y)
        self._g = None
        self._t = 0

    def reset(self):
        self.ini = IniWindow(self.data.T_ini, self.data.r_u, self.data.r_y)
        self._g = None
        self._t = 0
        self.diagnostics = []

    def solve_current(self):
        problem = build_deepc_problem(self.data, self.config, self.ini)
        x0 = self._g if self.warm_start else None
        result = solve(problem, x0=x0, **self.solver_options)
        return problem, result

    def __call__(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        t = self._t
        self._t += 1
        if not self.ini.ready:
            u = np.zeros(self.data.r_u)
            self.ini.push(u, y)
            return u
        problem, result = self.solve_current()
        g = result.solution
        if result.status == "infeasible_detected" or not np.all(np.isfinite(g)):
            raise SolverFailure(f"DeePC problem could not be solved ({result.status})",
                                step=t, result=result)
        u_pred, y_pred, rho = predict(self.data, g, self.ini)
        self.diagnostics.append({
            "step": t,
            "objective": result.objective,
            "rho_l1": float(np.abs(rho).sum()),
            "mean_psi_distance": float(psi_distances(self.data, g, self.ini).mean()),
            "status": result.status,
            "iterations": result.iterations,
        })
        self._g = g
        u = u_pred[:self.data.r_u].copy()
        self.ini.push(u, y)
        return u
