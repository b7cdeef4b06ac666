"""Solver for composite convex programs.

The problems produced by the MPC and DeePC assemblers have the form::

    minimize    1/2 z'Pz + q'z + c
                + sum_i  lam_i * || M_i z + m_i ||_1
                + sum_j  gam_j * max(0, d_M^2(S_j z + s_j) - r_j)
    subject to  A_eq z == b_eq,   A_in z <= b_in

``solve`` runs ADMM on the splitting ``v = C z + o`` where ``C`` stacks the
l1 maps, the whitened Mahalanobis maps of the hinge terms and the inequality
rows. The quadratic part and the equalities are handled exactly in the
``z``-update (one cached LU factorization per penalty value); the l1 terms,
the hinge terms and the inequalities each have closed-form proximal maps.
Every few checks the active set is read off the iterates and refined by an
active-set descent on the piecewise-quadratic objective ("polish"), which
recovers the optimum to machine precision; a bounded least-squares fit of the
multipliers certifies the result.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
from scipy.optimize import lsq_linear

from .exceptions import InputError
from .stats import GaussianSummary

__all__ = [
    "L1Term",
    "HingeTerm",
    "CompositeProblem",
    "SolverResult",
    "KKTResiduals",
    "solve",
    "kkt_residuals",
]

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible_detected"


def _vec(a, n=None):
    a = np.atleast_1d(np.asarray(a, dtype=float)).reshape(-1)
    if n is not None and a.size != n:
        raise InputError(f"expected a vector of length {n}, got {a.size}")
    return a


def _mat(a, ncols):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1) if a.size else a.reshape(0, ncols)
    if a.shape[1] != ncols:
        raise InputError(f"map has {a.shape[1]} columns, decision vector has {ncols}")
    return a


@dataclass(frozen=True)
class L1Term:
    """``weight * ||M z + m||_1``."""

    weight: float
    M: np.ndarray
    m: np.ndarray = None

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        m = np.zeros(M.shape[0]) if self.m is None else _vec(self.m, M.shape[0])
        if self.weight < 0:
            raise InputError("l1 weight must be nonnegative")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "m", m)

    def value(self, z):
        return self.weight * float(np.sum(np.abs(self.M @ z + self.m)))


@dataclass(frozen=True)
class HingeTerm:
    """``weight * max(0, d_M^2(S z + s; summary) - radius)``."""

    weight: float
    summary: GaussianSummary
    S: np.ndarray
    s: np.ndarray = None
    radius: float = 0.0
    W: np.ndarray = field(init=False, repr=False)
    w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.weight < 0:
            raise InputError("hinge weight must be nonnegative")
        if self.radius < 0:
            raise InputError("hinge radius must be nonnegative")
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        s = np.zeros(S.shape[0]) if self.s is None else _vec(self.s, S.shape[0])
        W, w = self.summary.whiten(S, s)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "w", w)

    def distance_sq(self, z):
        r = self.W @ z + self.w
        return float(r @ r)

    def value(self, z):
        return self.weight * max(0.0, self.distance_sq(z) - self.radius)


@dataclass(frozen=True)
class CompositeProblem:
    P: np.ndarray
    q: np.ndarray
    c: float = 0.0
    l1_terms: tuple = ()
    hinge_terms: tuple = ()
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    A_in: np.ndarray = None
    b_in: np.ndarray = None

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        n = P.shape[0]
        if P.shape != (n, n):
            raise InputError(f"P must be square, got {P.shape}")
        if not np.allclose(P, P.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(P).max(initial=0))):
            raise InputError("P must be symmetric")
        P = 0.5 * (P + P.T)
        if n and np.linalg.eigvalsh(P).min() < -1e-10 * max(1.0, np.abs(P).max()):
            raise InputError("P must be positive semidefinite")
        q = _vec(self.q, n)
        A_eq = np.zeros((0, n)) if self.A_eq is None else _mat(self.A_eq, n)
        b_eq = np.zeros(0) if self.b_eq is None else _vec(self.b_eq, A_eq.shape[0])
        A_in = np.zeros((0, n)) if self.A_in is None else _mat(self.A_in, n)
        b_in = np.zeros(0) if self.b_in is None else _vec(self.b_in, A_in.shape[0])
        for t in self.l1_terms:
            if t.M.shape[1] != n:
                raise InputError("l1 map does not match the decision vector length")
        for t in self.hinge_terms:
            if t.S.shape[1] != n:
                raise InputError("hinge map does not match the decision vector length")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "l1_terms", tuple(self.l1_terms))
        object.__setattr__(self, "hinge_terms", tuple(self.hinge_terms))
        object.__setattr__(self, "A_eq", A_eq)
        object.__setattr__(self, "b_eq", b_eq)
        object.__setattr__(self, "A_in", A_in)
        object.__setattr__(self, "b_in", b_in)

    @property
    def n(self):
        return self.q.size

    def quadratic_value(self, z):
        return 0.5 * float(z @ self.P @ z) + float(self.q @ z) + self.c

    def objective(self, z):
        z = _vec(z, self.n)
        return (self.quadratic_value(z)
                + sum(t.value(z) for t in self.l1_terms)
                + sum(t.value(z) for t in self.hinge_terms))

    def to_dict(self):
        """Dense row-major dump for offline inspection."""
        return {
            "P": self.P.tolist(), "q": self.q.tolist(), "c": self.c,
            "l1_terms": [{"weight": t.weight, "M": t.M.tolist(), "m": t.m.tolist()}
                         for t in self.l1_terms],
            "hinge_terms": [{"weight": t.weight, "radius": t.radius,
                             "mean": t.summary.mean.tolist(),
                             "covariance": t.summary.covariance.tolist(),
                             "ridge": t.summary.ridge,
                             "S": t.S.tolist(), "s": t.s.tolist()}
                            for t in self.hinge_terms],
            "A_eq": self.A_eq.tolist(), "b_eq": self.b_eq.tolist(),
            "A_in": self.A_in.tolist(), "b_in": self.b_in.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        n = len(d["q"])
        l1 = tuple(L1Term(t["weight"], np.asarray(t["M"], float).reshape(-1, n), t["m"])
                   for t in d.get("l1_terms", []))
        hinge = tuple(
            HingeTerm(t["weight"],
                      GaussianSummary.from_moments(t["mean"], t["covariance"], t.get("ridge", 0.0)),
                      np.asarray(t["S"], float).reshape(-1, n), t["s"], t["radius"])
            for t in d.get("hinge_terms", []))
        return cls(np.asarray(d["P"], float).reshape(n, n), d["q"], d.get("c", 0.0), l1, hinge,
                   np.asarray(d.get("A_eq", []), float).reshape(-1, n), d.get("b_eq", []),
                   np.asarray(d.get("A_in", []), float).reshape(-1, n), d.get("b_in", []))

    def dump(self, path):
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


class KKTResiduals(NamedTuple):
    stationarity: float
    primal: float
    complementarity: float


@dataclass
class SolverResult:
    solution: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    complementarity: float
    iterations: int
    status: str
    polished: bool = False

    @property
    def ok(self):
        return self.status == OPTIMAL


# ---------------------------------------------------------------------------
# KKT residuals


def _gradient_scale(problem, z):
    scale = max(1.0, np.abs(problem.P @ z).max(initial=0.0), np.abs(problem.q).max(initial=0.0))
    for t in problem.l1_terms:
        scale = max(scale, t.weight * np.abs(t.M).sum(axis=0).max(initial=0.0))
    for t in problem.hinge_terms:
        g = 2.0 * t.W.T @ (t.W @ z + t.w)
        scale = max(scale, t.weight * np.abs(g).max(initial=0.0))
    return scale


def _primal_scale(problem, z):
    scale = 1.0
    if problem.b_eq.size:
        scale = max(scale, np.abs(problem.A_eq @ z).max(), np.abs(problem.b_eq).max())
    if problem.b_in.size:
        scale = max(scale, np.abs(problem.A_in @ z).max(), np.abs(problem.b_in).max())
    return scale


def _bvls(G, b, lo, hi):
    if G.shape[1] == 0:
        return np.zeros(0)
    return lsq_linear(G, b, bounds=(lo, hi), method="bvls", tol=1e-14).x


def _bounded_multipliers(G, b, lo, hi, accept):
    """Multipliers within ``[lo, hi]`` minimizing ``||G x - b||``.

    Columns that are multiples of a unit vector (an l1 term pinning one
    coordinate) are first eliminated: the remaining columns are fitted on the
    other rows, and each pinned multiplier is then set by clipping. When that
    leaves a max-norm residual above ``accept`` the full bounded least-squares
    problem is solved and the better of the two is kept.
    """
    nnz = np.count_nonzero(G, axis=0)
    pinned = {}
    for k in np.flatnonzero(nnz == 1):
        row = int(np.flatnonzero(G[:, k])[0])
        pinned.setdefault(row, k)
    if pinned:
        prow = np.array(sorted(pinned))
        pcol = np.array([pinned[r] for r in prow])
        other = np.setdiff1d(np.arange(G.shape[1]), pcol)
        keep = np.setdiff1d(np.arange(G.shape[0]), prow)
        x = np.zeros(G.shape[1])
        x[other] = _bvls(G[np.ix_(keep, other)], b[keep], lo[other], hi[other])
        resid = b - G @ x
        coef = G[prow, pcol]
        x[pcol] = np.clip(resid[prow] / coef, lo[pcol], hi[pcol])
        cheap = np.abs(G @ x - b).max(initial=0.0)
        if cheap <= accept:
            return x
    else:
        cheap = np.inf
    full = _bvls(G, b, lo, hi)
    if pinned and cheap <= np.abs(G @ full - b).max(initial=0.0):
        return x
    return full


def kkt_residuals(problem, z, active_tol=1e-7):
    """KKT residuals of a candidate point.

    ``stationarity`` is the smallest max-norm of ``grad + sum of subgradients``
    over the multipliers allowed at ``z``: free multipliers for equalities,
    nonnegative ones for inequalities within ``active_tol`` of their bound,
    ``[-lam, lam]`` for l1 entries within ``active_tol`` of zero and
    ``[0, gam]`` for hinge terms within ``active_tol`` (relative) of their
    radius. ``primal`` is the largest constraint violation and
    ``complementarity`` the largest ``|multiplier * slack|``.
    """
    z = _vec(z, problem.n)
    grad = problem.P @ z + problem.q
    cols, lo, hi = [], [], []
    for t in problem.l1_terms:
        a = t.M @ z + t.m
        near = np.abs(a) <= active_tol
        grad = grad + t.weight * (t.M[~near].T @ np.sign(a[~near]))
        for i in np.flatnonzero(near):
            cols.append(t.M[i])
            lo.append(-t.weight)
            hi.append(t.weight)
    hinge_cols = []
    for t in problem.hinge_terms:
        r = t.W @ z + t.w
        d = float(r @ r)
        g = 2.0 * t.W.T @ r
        gap = d - t.radius
        if abs(gap) <= active_tol * max(1.0, t.radius):
            cols.append(g)
            lo.append(0.0)
            hi.append(t.weight)
            hinge_cols.append(abs(gap))
        elif gap > 0:
            grad = grad + t.weight * g
    n_free_l1 = len(cols)
    eq_res = problem.A_eq @ z - problem.b_eq
    for row in problem.A_eq:
        cols.append(row)
        lo.append(-np.inf)
        hi.append(np.inf)
    slack = problem.b_in - problem.A_in @ z
    active = np.flatnonzero(slack <= active_tol)
    for i in active:
        cols.append(problem.A_in[i])
        lo.append(0.0)
        hi.append(np.inf)

    if cols:
        G = np.array(cols).T
        mult = _bounded_multipliers(G, -grad, np.array(lo), np.array(hi),
                                    1e-10 * _gradient_scale(problem, z))
        stat_vec = grad + G @ mult
    else:
        mult = np.zeros(0)
        stat_vec = grad
    stationarity = float(np.abs(stat_vec).max(initial=0.0))

    primal = 0.0
    if eq_res.size:
        primal = max(primal, float(np.abs(eq_res).max()))
    if slack.size:
        primal = max(primal, float(max(0.0, -slack.min())))

    compl = 0.0
    n_l1 = n_free_l1 - len(hinge_cols)
    for k, gap in enumerate(hinge_cols):
        compl = max(compl, abs(mult[n_l1 + k]) * gap)
    offset = n_free_l1 + problem.A_eq.shape[0]
    for k, i in enumerate(active):
        compl = max(compl, abs(mult[offset + k] * slack[i]))
    return KKTResiduals(stationarity, primal, compl)


# ---------------------------------------------------------------------------
# proximal maps


def _hinge_prox(a, weight, radius, rho):
    """argmin_t weight*max(0, ||t||^2 - radius) + rho/2 ||t - a||^2."""
    na2 = float(a @ a)
    if na2 <= radius:
        return a
    t = a / (1.0 + 2.0 * weight / rho)
    if float(t @ t) >= radius:
        return t
    return a * math.sqrt(radius / na2)


def _reduce_equalities(A, b):
    """Independent rows spanning the equality system, or ``None`` if inconsistent."""
    if A.shape[0] == 0:
        return A, b, True
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    tol = max(A.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    r = int(np.sum(s > tol))
    Ar = s[:r, None] * Vt[:r]
    br = U[:, :r].T @ b
    resid = b - U[:, :r] @ br
    consistent = np.abs(resid).max(initial=0.0) <= 1e-9 * max(1.0, np.abs(b).max(initial=0.0))
    return Ar, br, consistent


class _Splitting:
    """Stacked, row-scaled operator ``C`` and its block layout."""

    def __init__(self, problem):
        blocks, offsets = [], []
        self.l1 = []       # (slice, weight per row)
        self.hinge = []    # (slice, weight, radius) in scaled coordinates
        n = problem.n
        row = 0
        for t in problem.l1_terms:
            k = t.M.shape[0]
            blocks.append(t.M)
            offsets.append(t.m)
            self.l1.append((slice(row, row + k), t.weight))
            row += k
        for t in problem.hinge_terms:
            k = t.W.shape[0]
            blocks.append(t.W)
            offsets.append(t.w)
            self.hinge.append((slice(row, row + k), t.weight, t.radius))
            row += k
        self.in_slice = slice(row, row + problem.A_in.shape[0])
        blocks.append(problem.A_in)
        offsets.append(np.zeros(problem.A_in.shape[0]))
        row += problem.A_in.shape[0]
        self.m = row
        C = np.vstack(blocks) if blocks else np.zeros((0, n))
        o = np.concatenate(offsets) if offsets else np.zeros(0)

        # row equilibration; hinge blocks share one factor to keep the prox radial
        norms = np.sqrt(np.sum(C * C, axis=1))
        norms[norms == 0] = 1.0
        d = 1.0 / norms
        for sl, _, _ in self.hinge:
            d[sl] = 1.0 / max(np.sqrt(np.mean(norms[sl] ** 2)), 1e-300)
        self.d = d
        self.C = C * d[:, None]
        self.o = o * d
        self.l1 = [(sl, w / d[sl]) for sl, w in self.l1]
        self.hinge = [(sl, w / d[sl][0] ** 2, r * d[sl][0] ** 2) for sl, w, r in self.hinge]
        self.b_in = problem.b_in * d[self.in_slice]

    def prox(self, a, rho):
        v = a.copy()
        for sl, thr in self.l1:
            t = thr / rho
            v[sl] = np.sign(a[sl]) * np.maximum(np.abs(a[sl]) - t, 0.0)
        for sl, w, r in self.hinge:
            v[sl] = _hinge_prox(a[sl], w, r, rho)
        if self.b_in.size:
            v[self.in_slice] = np.minimum(a[self.in_slice], self.b_in)
        return v


# ---------------------------------------------------------------------------
# polishing


def _initial_active_set(problem, split, v):
    l1 = [np.sign(v[sl]).astype(int) for sl, _ in split.l1]
    hinge = []
    for sl, _, r in split.hinge:
        d2 = float(v[sl] @ v[sl])
        hinge.append(d2 > r * (1 + 1e-9) + 1e-14)
    active_in = v[split.in_slice] >= split.b_in
    return l1, hinge, active_in


def _pinned_coordinates(term):
    """Per row of ``term.M``: the coordinate it pins to zero (or -1) and its coefficient."""
    M = term.M
    nnz = np.count_nonzero(M, axis=1)
    idx = np.where(nnz == 1, np.argmax(M != 0, axis=1), -1)
    idx[term.m != 0.0] = -1
    coef = M[np.arange(M.shape[0]), np.maximum(idx, 0)]
    return idx, coef


def _kkt_solve(problem, l1, hinge, active_in, delta, refine, pins):
    """Minimize the smooth model of one active set.

    l1 rows that pin a single coordinate to zero are eliminated rather than
    added as constraint rows, which keeps the system small for sparse ``z``.
    Returns ``(z, mult, kinds)`` with one multiplier per pinned row or
    constraint row, in the order of ``kinds``.
    """
    n = problem.n
    P = problem.P.copy()
    q = problem.q.copy()
    rows, rhs, kinds = [], [], []
    pinned, pinned_kinds = {}, []
    for j, (t, signs, (pidx, pcoef)) in enumerate(zip(problem.l1_terms, l1, pins)):
        nz = signs != 0
        q = q + t.weight * (t.M[nz].T @ signs[nz])
        for i in np.flatnonzero(~nz):
            c = int(pidx[i])
            if c >= 0 and c not in pinned:
                pinned[c] = pcoef[i]
                pinned_kinds.append((("l1", j, i), (c, pcoef[i])))
            else:
                rows.append(t.M[i])
                rhs.append(-t.m[i])
                kinds.append(("l1", j, i))
    for t, on in zip(problem.hinge_terms, hinge):
        if on:
            P = P + 2.0 * t.weight * (t.W.T @ t.W)
            q = q + 2.0 * t.weight * (t.W.T @ t.w)
    for row, b in zip(problem.A_eq, problem.b_eq):
        rows.append(row)
        rhs.append(b)
        kinds.append(("eq", None, None))
    for i in np.flatnonzero(active_in):
        rows.append(problem.A_in[i])
        rhs.append(problem.b_in[i])
        kinds.append(("in", None, i))
    G = np.array(rows).reshape(-1, n)
    free = np.ones(n, dtype=bool)
    free[list(pinned)] = False
    nf, m = int(free.sum()), G.shape[0]
    Gf = G[:, free]
    K = np.block([[P[np.ix_(free, free)], Gf.T], [Gf, np.zeros((m, m))]])
    Kreg = K + np.diag(np.r_[np.full(nf, delta), np.full(m, -delta)])
    rhs_full = np.r_[-q[free], np.array(rhs, dtype=float)]
    try:
        lu = sla.lu_factor(Kreg, check_finite=False)
    except (ValueError, np.linalg.LinAlgError):
        return None
    sol = sla.lu_solve(lu, rhs_full, check_finite=False)
    for _ in range(refine):
        sol = sol + sla.lu_solve(lu, rhs_full - K @ sol, check_finite=False)
    if not np.all(np.isfinite(sol)):
        return None
    z = np.zeros(n)
    z[free] = sol[:nf]
    mult = sol[nf:]
    if pinned_kinds:
        grad = P @ z + q + G.T @ mult
        extra = [-grad[idx] / coef for _, (idx, coef) in pinned_kinds]
        mult = np.r_[mult, extra]
        kinds = kinds + [k for k, _ in pinned_kinds]
    return z, mult, kinds


def _hinge_crossings(t, z, d):
    """Steps ``s`` in ``(0, 1]`` where ``d_M^2(z + s d)`` meets the hinge radius."""
    r0 = t.W @ z + t.w
    r1 = t.W @ d
    a, b, c = float(r1 @ r1), 2.0 * float(r0 @ r1), float(r0 @ r0) - t.radius
    if a == 0.0:
        roots = [] if b == 0.0 else [-c / b]
    else:
        disc = b * b - 4.0 * a * c
        if disc < 0:
            return []
        sq = math.sqrt(disc)
        roots = [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
    return [x for x in roots if 0.0 < x <= 1.0]


def _polish(problem, split, z, v, eps_abs, eps_rel, delta=1e-10, refine=3, max_rounds=100):
    """Active-set refinement started from the ADMM guess in ``v``.

    The objective is piecewise quadratic; each piece is fixed by the l1 rows
    at zero or with a given sign, the hinge terms on or off and the tight
    inequalities. Every round solves the equality-constrained QP of the
    current piece and moves toward its minimizer, stopping at the breakpoint
    along the segment with the lowest true objective (a sign change, a hinge
    crossing or a blocking inequality). When the minimizer is reached the
    worst multiplier violation, if any, is released. The objective decreases
    strictly, so pieces are never revisited. Returns a result certified by
    :func:`kkt_residuals`, or ``None``.
    """
    l1, hinge, active_in = _initial_active_set(problem, split, v)
    pins = [_pinned_coordinates(t) for t in problem.l1_terms]

    # a feasible start that is consistent with its piece
    z_cur = None
    for _ in range(10):
        out = _kkt_solve(problem, l1, hinge, active_in, delta, refine, pins)
        if out is None:
            return None
        zp = out[0]
        if not problem.b_in.size:
            z_cur = zp
            break
        viol = problem.A_in @ zp - problem.b_in > 1e-9 * _primal_scale(problem, zp)
        if not np.any(viol & ~active_in):
            z_cur = zp
            break
        active_in = active_in | viol
    if z_cur is None:
        return None
    l1 = [np.sign(t.M @ z_cur + t.m).astype(int) * (s != 0) for t, s in zip(problem.l1_terms, l1)]
    hinge = [t.distance_sq(z_cur) > t.radius for t in problem.hinge_terms]

    for _ in range(max_rounds):
        out = _kkt_solve(problem, l1, hinge, active_in, delta, refine, pins)
        if out is None:
            return None
        z_new, mult, kinds = out
        d = z_new - z_cur
        t_max = 1.0
        blocking = None
        if problem.b_in.size:
            rate = problem.A_in @ d
            slack = problem.b_in - problem.A_in @ z_cur
            for i in np.flatnonzero(~active_in & (rate > 0)):
                ti = max(slack[i], 0.0) / rate[i]
                if ti < t_max:
                    t_max, blocking = ti, i
        steps = {t_max}
        for t, signs in zip(problem.l1_terms, l1):
            a0 = t.M @ z_cur + t.m
            a1 = t.M @ z_new + t.m
            cross = (signs != 0) & (signs * a1 < 0) & (signs * a0 > 0)
            steps.update(float(x) for x in a0[cross] / (a0[cross] - a1[cross]) if x < t_max)
        for t in problem.hinge_terms:
            steps.update(x for x in _hinge_crossings(t, z_cur, d) if x < t_max)
        steps = sorted(steps)
        values = [problem.objective(z_cur + x * d) for x in steps]
        k = int(np.argmin(values))
        step = steps[k]
        if step <= 0.0 and blocking is None:
            return None
        z_cur = z_cur + step * d if step < 1.0 else z_new
        if step < 1.0:
            for t, signs in zip(problem.l1_terms, l1):
                a = t.M @ z_cur + t.m
                scale = max(1.0, np.abs(a).max(initial=0.0))
                keep = signs != 0
                signs[keep & (np.abs(a) <= 1e-12 * scale)] = 0
                moved = keep & (signs != 0)
                signs[moved] = np.sign(a[moved]).astype(int)
            for j, t in enumerate(problem.hinge_terms):
                gap = t.distance_sq(z_cur) - t.radius
                if abs(gap) <= 1e-12 * max(1.0, t.radius):
                    rate = 2.0 * float((t.W @ z_cur + t.w) @ (t.W @ d))
                    hinge[j] = rate > 0
                else:
                    hinge[j] = gap > 0
            if blocking is not None and step == t_max:
                active_in = active_in.copy()
                active_in[blocking] = True
            continue
        gtol = 1e-9 * _gradient_scale(problem, z_cur)
        worst, worst_excess = None, gtol
        for (kind, j, i), mu in zip(kinds, mult):
            if kind == "l1":
                excess = abs(mu) - problem.l1_terms[j].weight
            elif kind == "in":
                excess = -mu
            else:
                continue
            if excess > worst_excess:
                worst, worst_excess = (kind, j, i, mu), excess
        if worst is None:
            break
        kind, j, i, mu = worst
        if kind == "l1":
            l1[j][i] = 1 if mu > 0 else -1
        else:
            active_in = active_in.copy()
            active_in[i] = False
    # also reached when rounds run out: a degenerate vertex may admit valid
    # multipliers that the KKT solve did not pick
    result = _finish(problem, z_cur, 0, eps_abs, eps_rel, True)
    return result if result.ok else None


# ---------------------------------------------------------------------------
# ADMM


def _finish(problem, z, iters, eps_abs, eps_rel, polished, status=None, active_tol=None):
    res = kkt_residuals(problem, z, **({} if active_tol is None else {"active_tol": active_tol}))
    if status is None:
        ok = (res.stationarity <= eps_abs + eps_rel * _gradient_scale(problem, z)
              and res.primal <= eps_abs + eps_rel * _primal_scale(problem, z)
              and res.complementarity <= eps_abs + eps_rel * _gradient_scale(problem, z))
        status = OPTIMAL if ok else MAX_ITER
    return SolverResult(z, problem.objective(z), res.primal, res.stationarity,
                        res.complementarity, iters, status, polished)


def solve(problem, tol_abs=1e-8, tol_rel=1e-6, max_iter=50_000, x0=None, rho=0.1,
          sigma=1e-6, alpha=1.6, polish=True, check_every=25, adaptive_rho=True):
    """Minimize a :class:`CompositeProblem`.

    Parameters
    ----------
    problem : CompositeProblem
    tol_abs, tol_rel : float
        Absolute and relative tolerances on the KKT residuals.
    max_iter : int
        ADMM iteration limit; the best iterate is returned with status
        ``"max_iter"`` when it is reached.
    x0 : array_like, optional
        Initial iterate.
    rho, sigma, alpha : float
        Initial penalty, proximal regularization and over-relaxation.
    polish : bool
        Try to finish with an exact active-set KKT solve.

    Returns
    -------
    SolverResult
        ``dual_residual`` holds the stationarity residual of
        :func:`kkt_residuals` at the returned point.
    """
    n = problem.n
    Ar, br, consistent = _reduce_equalities(problem.A_eq, problem.b_eq)
    if not consistent:
        z = np.linalg.lstsq(problem.A_eq, problem.b_eq, rcond=None)[0]
        return _finish(problem, z, 0, tol_abs, tol_rel, False, status=INFEASIBLE)

    split = _Splitting(problem)
    C, o = split.C, split.o
    p = Ar.shape[0]
    z = np.zeros(n) if x0 is None else _vec(x0, n).copy()
    a = C @ z + o
    v = split.prox(a, rho)
    y = np.zeros(split.m)
    CtC = C.T @ C

    def factor(rho_):
        K = np.zeros((n + p, n + p))
        K[:n, :n] = problem.P + sigma * np.eye(n) + rho_ * CtC
        K[:n, n:] = Ar.T
        K[n:, :n] = Ar
        return sla.lu_factor(K, check_finite=False)

    lu = factor(rho)
    best = None
    it = 0
    rhs = np.empty(n + p)
    rhs[n:] = br
    for it in range(1, int(max_iter) + 1):
        rhs[:n] = sigma * z - problem.q - C.T @ (rho * (o - v) + y)
        sol = sla.lu_solve(lu, rhs, check_finite=False)
        z_new, nu = sol[:n], sol[n:]
        a = C @ z_new + o
        a_rel = alpha * a + (1.0 - alpha) * v
        v_new = split.prox(a_rel + y / rho, rho)
        y = y + rho * (a_rel - v_new)
        z, v = z_new, v_new

        if it % check_every and it != max_iter:
            continue
        r_prim = np.abs(a - v).max(initial=0.0)
        Pz = problem.P @ z
        Cty = C.T @ y
        r_dual = np.abs(Pz + problem.q + Cty + Ar.T @ nu).max(initial=0.0)
        eps_p = tol_abs + tol_rel * max(np.abs(a).max(initial=0.0), np.abs(v).max(initial=0.0))
        eps_d = tol_abs + tol_rel * max(np.abs(Pz).max(initial=0.0), np.abs(Cty).max(initial=0.0),
                                        np.abs(problem.q).max(initial=0.0))
        if best is None or r_prim / eps_p + r_dual / eps_d < best[0]:
            best = (r_prim / eps_p + r_dual / eps_d, z.copy())
        near = r_prim <= 1e3 * eps_p and r_dual <= 1e3 * eps_d
        periodic = (it // check_every) % 2 == 0
        if polish and (near or periodic or it == max_iter):
            result = _polish(problem, split, z, v, tol_abs, tol_rel)
            if result is not None:
                return dataclasses.replace(result, iterations=it)
        if r_prim <= eps_p and r_dual <= eps_d:
            result = _finish(problem, z, it, tol_abs, tol_rel, False)
            if result.ok:
                return result
        if adaptive_rho and split.m:
            num = r_prim / max(np.abs(a).max(initial=0.0), np.abs(v).max(initial=0.0), 1e-30)
            den = r_dual / max(np.abs(Pz).max(initial=0.0), np.abs(Cty).max(initial=0.0),
                               np.abs(problem.q).max(initial=0.0), 1e-30)
            if den > 0 and num > 0:
                new_rho = float(np.clip(rho * math.sqrt(num / den), 1e-6, 1e6))
                if new_rho > 5 * rho or new_rho < rho / 5:
                    rho = new_rho
                    lu = factor(rho)
    z_out = best[1] if best is not None else z
    return _finish(problem, z_out, it, tol_abs, tol_rel, False)
