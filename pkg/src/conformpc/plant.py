"""Plants, trajectories and closed-loop simulation.

A plant exposes ``step(x, u, w)`` and ``output(x, nu)`` plus its noise
covariances. Simulations start from the zero state, draw the output noise and
then the process noise at every step from one ``numpy.random.Generator``, and
record states, inputs and outputs in a :class:`Trajectory`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .exceptions import InputError, SolverFailure

__all__ = [
    "PlantModel",
    "BenchmarkPlant",
    "LinearPlant",
    "Trajectory",
    "benchmark_step",
    "benchmark_output",
    "make_rng",
    "collect_data",
    "simulate_closed_loop",
]

DEFAULT_THETA = 1.0 / 9.0


class PlantModel(Protocol):
    state_dim: int
    input_dim: int
    output_dim: int

    def step(self, x, u, w): ...

    def output(self, x, nu): ...

    def sample_process_noise(self, rng): ...

    def sample_output_noise(self, rng): ...


def _gaussian_sampler(cov, dim):
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape == (1, dim) and dim > 1:
        cov = np.diag(cov[0])
    if cov.shape != (dim, dim):
        raise InputError(f"noise covariance must be {dim}x{dim}, got {cov.shape}")
    if not np.any(cov):
        return None
    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    if evals.min() < -1e-12 * max(1.0, evals.max()):
        raise InputError("noise covariance must be positive semidefinite")
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


class _NoiseMixin:
    def _init_noise(self, process_cov, output_cov):
        self._w_root = _gaussian_sampler(process_cov, self.state_dim)
        self._nu_root = _gaussian_sampler(output_cov, self.output_dim)

    def sample_process_noise(self, rng):
        if self._w_root is None:
            return np.zeros(self.state_dim)
        return self._w_root @ rng.standard_normal(self.state_dim)

    def sample_output_noise(self, rng):
        if self._nu_root is None:
            return np.zeros(self.output_dim)
        return self._nu_root @ rng.standard_normal(self.output_dim)


def benchmark_step(x, u, w, theta=DEFAULT_THETA):
    """One step of the two-state benchmark with a quadratic drift and state-dependent input gain."""
    x1, x2 = float(x[0]), float(x[1])
    u = float(np.asarray(u).reshape(-1)[0])
    return np.array([
        0.98 * x1 + 0.1 * x2 + theta * x2 * x2 + w[0],
        0.95 * x2 + (0.1 + theta * math.tanh(x1)) * u + w[1],
    ])


def benchmark_output(x, nu):
    return float(x[1]) + float(np.asarray(nu).reshape(-1)[0])


@dataclass(frozen=True)
class BenchmarkPlant(_NoiseMixin):
    """Nonlinear benchmark plant; ``theta = 0`` gives an LTI system."""

    theta: float = DEFAULT_THETA
    process_noise_cov: tuple = (0.1, 0.05)
    output_noise_var: float = 0.1

    state_dim = 2
    input_dim = 1
    output_dim = 1

    def __post_init__(self):
        cov = np.asarray(self.process_noise_cov, dtype=float)
        if cov.ndim == 1:
            cov = np.diag(cov)
        object.__setattr__(self, "_w_root", _gaussian_sampler(cov, 2))
        object.__setattr__(self, "_nu_root", _gaussian_sampler([[self.output_noise_var]], 1))

    def step(self, x, u, w):
        return benchmark_step(x, u, w, self.theta)

    def output(self, x, nu):
        return np.array([benchmark_output(x, nu)])

    def linearization(self):
        """``(A, B, C)`` of the ``theta = 0`` dynamics."""
        A = np.array([[0.98, 0.1], [0.0, 0.95]])
        B = np.array([[0.0], [0.1]])
        C = np.array([[0.0, 1.0]])
        return A, B, C


class LinearPlant(_NoiseMixin):
    """``x+ = A x + B u + w``, ``y = C x + nu``."""

    def __init__(self, A, B, C=None, process_noise_cov=None, output_noise_cov=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.asarray(B, dtype=float).reshape(self.A.shape[0], -1)
        self.C = np.eye(self.A.shape[0]) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
        self.state_dim = self.A.shape[0]
        self.input_dim = self.B.shape[1]
        self.output_dim = self.C.shape[0]
        zeros_w = np.zeros((self.state_dim, self.state_dim))
        zeros_v = np.zeros((self.output_dim, self.output_dim))
        self._init_noise(zeros_w if process_noise_cov is None else process_noise_cov,
                         zeros_v if output_noise_cov is None else output_noise_cov)

    def step(self, x, u, w):
        return self.A @ x + self.B @ np.atleast_1d(u) + w

    def output(self, x, nu):
        return self.C @ x + nu


@dataclass
class Trajectory:
    """Time-indexed record of one simulation.

    ``states[k]`` and ``outputs[k]`` belong to the same time step. A closed-loop
    run records the terminal state and output, so it has one more state than
    inputs; a data collection run applies an input at every recorded sample.
    """

    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    seed: object = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.inputs = _as_rows(self.inputs)
        self.outputs = _as_rows(self.outputs)
        if len(self.outputs) != len(self.states):
            raise InputError("states and outputs must have the same length")
        if len(self.inputs) not in (len(self.states), len(self.states) - 1):
            raise InputError("inputs must match states, or be one shorter")

    def __len__(self):
        return len(self.states)

    @property
    def unstable(self):
        return bool(self.metadata.get("unstable", False))

    def to_csv(self, path):
        """One row per time step: ``k, x1..xn, u1..um, y1..yp`` (missing input left blank)."""
        path = Path(path)
        nx, nu, ny = self.states.shape[1], self.inputs.shape[1], self.outputs.shape[1]
        header = (["k"] + [f"x{i + 1}" for i in range(nx)]
                  + (["u"] if nu == 1 else [f"u{i + 1}" for i in range(nu)])
                  + (["y"] if ny == 1 else [f"y{i + 1}" for i in range(ny)]))
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(len(self.states)):
                u = self.inputs[k] if k < len(self.inputs) else [""] * nu
                writer.writerow([k, *map(repr_float, self.states[k]),
                                 *map(repr_float, u), *map(repr_float, self.outputs[k])])
        return path

    def to_dict(self):
        return {
            "seed": _jsonable(self.seed),
            "metadata": _jsonable(self.metadata),
            "states": self.states.tolist(),
            "inputs": self.inputs.tolist(),
            "outputs": self.outputs.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        nx = len(d["states"][0]) if d["states"] else 0
        inputs = np.asarray(d["inputs"], dtype=float)
        if inputs.size == 0:
            inputs = inputs.reshape(0, 1)
        return cls(np.asarray(d["states"], dtype=float).reshape(-1, nx), inputs,
                   np.asarray(d["outputs"], dtype=float), _seed_from_json(d.get("seed")),
                   dict(d.get("metadata", {})))

    def to_json(self, path):
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_rows(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 2:
        return a
    if a.size == 0:
        return a.reshape(0, 1)
    return a.reshape(len(a), -1)


def repr_float(v):
    if v == "":
        return v
    return repr(float(v))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, np.random.SeedSequence):
        return {"entropy": obj.entropy, "spawn_key": list(obj.spawn_key)}
    return obj


def _seed_from_json(seed):
    if isinstance(seed, dict) and "entropy" in seed:
        return np.random.SeedSequence(seed["entropy"], spawn_key=tuple(seed["spawn_key"]))
    return seed


def make_rng(seed):
    """Generator from an int, a ``SeedSequence`` or an existing ``Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def collect_data(plant, K0, T, seed=None, x0=None):
    """Run ``T + 1`` samples of static output feedback ``u_k = K0 y_k``.

    Returns a trajectory with ``T + 1`` states, inputs and outputs (no
    terminal state), starting from ``x0`` (zero by default).
    """
    if int(T) != T or T < 0:
        raise InputError(f"T must be a nonnegative integer, got {T}")
    rng = make_rng(seed)
    K0 = np.atleast_2d(np.asarray(K0, dtype=float))
    x = np.zeros(plant.state_dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    X, U, Y = [], [], []
    for _ in range(int(T) + 1):
        y = np.atleast_1d(plant.output(x, plant.sample_output_noise(rng)))
        u = K0 @ y
        X.append(x)
        U.append(u)
        Y.append(y)
        x = plant.step(x, u, plant.sample_process_noise(rng))
    return Trajectory(np.array(X), np.array(U), np.array(Y), seed=seed,
                      metadata={"kind": "collection", "K0": K0.tolist(), "T": int(T)})


def simulate_closed_loop(plant, controller, T_sim, seed=None, abort_threshold=50.0,
                         measure_state=False, x0=None):
    """Close the loop around ``controller`` for ``T_sim`` steps.

    At step ``k`` the output ``y_k`` is measured, ``u_k = controller(y_k)`` is
    applied and the plant advances. The run stops early, with
    ``metadata['unstable'] = True``, as soon as ``|y_k|`` exceeds
    ``abort_threshold`` or anything becomes non-finite. With
    ``measure_state=True`` the controller receives the state instead of the
    output.

    A controller exception is re-raised as :class:`SolverFailure` carrying the
    step index and the partial trajectory in ``exc.result``.
    """
    rng = make_rng(seed)
    x = np.zeros(plant.state_dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    X, U, Y = [], [], []
    meta = {"kind": "closed_loop", "T_sim": int(T_sim), "unstable": False,
            "first_unstable_step": None, "abort_threshold": abort_threshold}
    for k in range(int(T_sim) + 1):
        y = np.atleast_1d(plant.output(x, plant.sample_output_noise(rng)))
        X.append(x)
        Y.append(y)
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))) or np.max(np.abs(y)) > abort_threshold:
            meta["unstable"] = True
            meta["first_unstable_step"] = k
            break
        if k == T_sim:
            break
        try:
            u = np.atleast_1d(np.asarray(controller(x if measure_state else y), dtype=float))
        except Exception as exc:
            meta["failed"] = True
            meta["failed_step"] = k
            inputs = np.array(U).reshape(len(U), -1) if U else np.zeros((0, plant.input_dim))
            traj = Trajectory(np.array(X), inputs, np.array(Y), seed, meta)
            if isinstance(exc, SolverFailure):
                raise SolverFailure(exc.reason, step=k if exc.step is None else exc.step,
                                    result=traj) from exc
            raise SolverFailure(f"controller raised {exc!r}", step=k, result=traj) from exc
        U.append(u)
        with np.errstate(over="ignore", invalid="ignore"):
            x = plant.step(x, u, plant.sample_process_noise(rng))
    U = np.array(U).reshape(len(U), plant.input_dim) if U else np.zeros((0, plant.input_dim))
    return Trajectory(np.array(X), U, np.array(Y), seed=seed, metadata=meta)
