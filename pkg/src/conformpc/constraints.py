"""Polyhedral constraint sets ``{x : H x <= h}``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError

__all__ = ["Polyhedron", "box"]


@dataclass(frozen=True)
class Polyhedron:
    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if H.shape[0] != h.size:
            raise InputError("H and h must have the same number of rows")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @property
    def dim(self):
        return self.H.shape[1]

    def contains(self, x, tol=1e-9):
        return bool(np.all(self.H @ np.asarray(x, dtype=float) <= self.h + tol))

    @classmethod
    def unconstrained(cls, dim):
        return cls(np.zeros((0, dim)), np.zeros(0))


def box(lower, upper):
    """Box ``lower <= x <= upper``; infinite bounds produce no rows."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.shape != upper.shape:
        raise InputError("lower and upper bounds must have the same shape")
    if np.any(lower > upper):
        raise InputError("empty box: some lower bound exceeds its upper bound")
    n = lower.size
    rows, rhs = [], []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        if np.isfinite(upper[i]):
            rows.append(e)
            rhs.append(upper[i])
        if np.isfinite(lower[i]):
            rows.append(-e)
            rhs.append(-lower[i])
    return Polyhedron(np.array(rows).reshape(-1, n), np.array(rhs))
