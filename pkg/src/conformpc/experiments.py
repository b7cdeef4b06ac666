"""Experiment configuration, single closed-loop runs and the Monte Carlo study.

Every replicate ``i`` derives its randomness from
``SeedSequence(base_seed, spawn_key=(i,))``: the first child drives the data
collection and the second the closed loop. All controllers compared in one
study therefore see the same data and the same noise realizations, and the
aggregate does not depend on how replicates are scheduled.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constraints import box
from .deepc import DeePCConfig, DeePCController, build_deepc_data
from .exceptions import InputError, NumericalError, SolverFailure
from .mpc import MPCConfig, MPCController
from .plant import BenchmarkPlant, Trajectory, collect_data, simulate_closed_loop
from .stats import empirical_summary, mahalanobis_sq, scaled_ridge

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunResult",
    "RunRecord",
    "MonteCarloSummary",
    "CONTROLLERS",
    "detect_instability",
    "replicate_seeds",
    "run_single",
    "run_montecarlo",
    "emit_figure_data",
    "state_summary",
]

log = logging.getLogger(__name__)

CONTROLLERS = ("standard-deepc", "floodgates-deepc", "dc-mpc")


class ConfigError(InputError):
    """Invalid configuration; the message starts with the offending field path."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PlantSection:
    theta: float = 1.0 / 9.0
    process_noise_cov: list = field(default_factory=lambda: [0.1, 0.05])
    output_noise_var: float = 0.1


@dataclass
class CollectionSection:
    T: int = 200
    K0: float = -6.0


@dataclass
class ControllerSection:
    kind: str = "floodgates-deepc"
    T_ini: int = 4
    N: int = 8
    lambda_g: float = 1.0
    lambda_rho: float = 1.0
    Q_y: float = 1.0
    Q_x: float = 1.0
    R: float = 2.0
    gamma: float = 5.0
    epsilon: float | None = None
    regularizer: str = "quadratic"
    confidence: float = 0.95
    u_bounds: list | None = None
    y_bounds: list | None = None


@dataclass
class EvaluationSection:
    T_sim: int = 200
    T_sim_montecarlo: int = 100
    threshold: float = 50.0
    n_runs: int = 100
    base_seed: int = 2021
    workers: int = 1


@dataclass
class OutputSection:
    out_dir: str = "results"


_SECTIONS = {
    "plant": PlantSection,
    "collection": CollectionSection,
    "controller": ControllerSection,
    "evaluation": EvaluationSection,
    "output": OutputSection,
}


def _check(cond, path, message):
    if not cond:
        raise ConfigError(f"{path}: {message}")


@dataclass
class ExperimentConfig:
    """Plant, data collection, controller, evaluation and output settings.

    The defaults are the benchmark settings: ``T = 200`` samples collected
    under ``u = -6 y``, ``T_ini = 4``, ``N = 8``, unit l1 weights,
    ``Q_y = 1``, ``R = 2``, ``gamma = 5`` with the quadratic regularizer,
    ``T_sim = 200`` for single runs and ``100`` for the Monte Carlo study.
    """

    plant: PlantSection = field(default_factory=PlantSection)
    collection: CollectionSection = field(default_factory=CollectionSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        self.validate()

    def validate(self):
        p, c, k, e = self.plant, self.collection, self.controller, self.evaluation
        _check(isinstance(p.theta, (int, float)) and math.isfinite(p.theta), "plant.theta",
               "must be a finite number")
        cov = np.asarray(p.process_noise_cov, dtype=float)
        _check(cov.shape in ((2,), (2, 2)), "plant.process_noise_cov",
               "must be a length-2 diagonal or a 2x2 matrix")
        if cov.ndim == 1:
            _check(np.all(cov >= 0), "plant.process_noise_cov", "variances must be nonnegative")
        else:
            _check(np.allclose(cov, cov.T) and np.linalg.eigvalsh(cov).min() >= -1e-12,
                   "plant.process_noise_cov", "must be symmetric positive semidefinite")
        _check(p.output_noise_var >= 0, "plant.output_noise_var", "must be nonnegative")
        _check(isinstance(c.T, int) and c.T >= 1, "collection.T", "must be a positive integer")
        _check(math.isfinite(c.K0), "collection.K0", "must be finite")
        _check(k.kind in CONTROLLERS, "controller.kind", f"must be one of {CONTROLLERS}")
        for name in ("T_ini", "N"):
            v = getattr(k, name)
            _check(isinstance(v, int) and v >= 1, f"controller.{name}", "must be a positive integer")
        for name in ("lambda_g", "lambda_rho", "gamma", "Q_y", "Q_x"):
            _check(getattr(k, name) >= 0, f"controller.{name}", "must be nonnegative")
        _check(k.R > 0, "controller.R", "must be positive")
        _check(k.epsilon is None or k.epsilon > 0, "controller.epsilon", "must be positive")
        _check(k.regularizer in ("quadratic", "hinge"), "controller.regularizer",
               "must be 'quadratic' or 'hinge'")
        _check(0 < k.confidence < 1, "controller.confidence", "must lie in (0, 1)")
        for name in ("u_bounds", "y_bounds"):
            b = getattr(k, name)
            if b is not None:
                _check(len(b) == 2 and float(b[0]) <= float(b[1]), f"controller.{name}",
                       "must be [lower, upper] with lower <= upper")
        if k.kind != "dc-mpc":
            _check(c.T >= k.T_ini + k.N + 1, "collection.T",
                   f"too short for T_ini={k.T_ini}, N={k.N}")
        for name in ("T_sim", "T_sim_montecarlo", "n_runs"):
            v = getattr(e, name)
            _check(isinstance(v, int) and v >= 1, f"evaluation.{name}", "must be a positive integer")
        _check(e.threshold > 0, "evaluation.threshold", "must be positive")
        _check(isinstance(e.base_seed, int) and e.base_seed >= 0, "evaluation.base_seed",
               "must be a nonnegative integer")
        _check(isinstance(e.workers, int) and e.workers >= 1, "evaluation.workers",
               "must be a positive integer")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("<root>: must be a JSON object")
        sections = {}
        for name, value in d.items():
            if name not in _SECTIONS:
                raise ConfigError(f"{name}: unknown section")
            if not isinstance(value, dict):
                raise ConfigError(f"{name}: must be an object")
            typ = _SECTIONS[name]
            known = {f.name: f for f in dataclasses.fields(typ)}
            for key, v in value.items():
                if key not in known:
                    raise ConfigError(f"{name}.{key}: unknown field")
                default = known[key].default
                if isinstance(default, int) and not isinstance(default, bool) \
                        and isinstance(v, float) and v.is_integer():
                    value = {**value, key: int(v)}
                if isinstance(default, (int, float)) and not isinstance(v, (int, float)):
                    raise ConfigError(f"{name}.{key}: expected a number, got {v!r}")
            sections[name] = typ(**value)
        return cls(**sections)

    def dump(self, path):
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"<root>: {path} is not valid JSON ({exc})") from exc
        return cls.from_dict(d)

    def replace(self, **sections):
        """Copy with some fields changed, e.g. ``replace(controller={"gamma": 0})``."""
        d = self.to_dict()
        for name, changes in sections.items():
            if name not in _SECTIONS:
                raise ConfigError(f"{name}: unknown section")
            d[name] = {**d[name], **changes}
        return ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------------------
# single runs


def make_plant(config):
    p = config.plant
    return BenchmarkPlant(float(p.theta), tuple(np.asarray(p.process_noise_cov, dtype=float).tolist())
                          if np.ndim(p.process_noise_cov) == 1 else
                          np.asarray(p.process_noise_cov, dtype=float),
                          float(p.output_noise_var))


def replicate_seeds(base_seed, replicate):
    """``(collection_seed, closed_loop_seed)`` of one replicate."""
    root = np.random.SeedSequence(int(base_seed), spawn_key=(int(replicate),))
    return tuple(root.spawn(2))


def detect_instability(trajectory, threshold=50.0):
    """``(True, k)`` for the first step with ``|y_k| > threshold`` or a non-finite value.

    >>> t = Trajectory(np.zeros((3, 2)), np.zeros((2, 1)), np.array([[0.0], [50.1], [0.0]]))
    >>> detect_instability(t)
    (True, 1)
    """
    y = np.asarray(trajectory.outputs, dtype=float).reshape(len(trajectory.outputs), -1)
    x = np.asarray(trajectory.states, dtype=float).reshape(len(trajectory.states), -1)
    bad = np.any(~np.isfinite(y), axis=1) | np.any(np.abs(np.nan_to_num(y)) > threshold, axis=1)
    if x.shape[0] == y.shape[0]:
        bad |= np.any(~np.isfinite(x), axis=1)
    idx = np.flatnonzero(bad)
    if idx.size:
        return True, int(idx[0])
    return False, None


def state_summary(collection, ridge_scale=1e-8):
    """Gaussian summary of the hidden states recorded during data collection."""
    X = np.asarray(collection.states, dtype=float).T
    ridge = scaled_ridge(X, ridge_scale)
    return empirical_summary(X, ridge if ridge > 0 else ridge_scale)


def mean_state_distance(trajectory, summary, stop=None):
    """Mean squared Mahalanobis distance of ``states[:stop]`` to ``summary``."""
    X = np.asarray(trajectory.states, dtype=float)[:stop]
    X = X[np.all(np.isfinite(X), axis=1)]
    if len(X) == 0:
        return float("nan")
    return float(np.mean([mahalanobis_sq(x, summary) for x in X]))


def build_controller(config, collection, kind=None):
    """Controller of the requested kind built from one collection run."""
    k = config.controller
    kind = kind or k.kind
    U = box([k.u_bounds[0]], [k.u_bounds[1]]) if k.u_bounds else None
    if kind == "dc-mpc":
        mpc_cfg = MPCConfig(N=k.N, Q=k.Q_x * np.eye(2), R=k.R, gamma=k.gamma,
                            regularizer=k.regularizer, confidence=k.confidence, U=U)
        return MPCController.from_data(collection.states, collection.inputs, mpc_cfg)
    data = build_deepc_data(collection.inputs, collection.outputs, k.T_ini, k.N, epsilon=k.epsilon)
    gamma = 0.0 if kind == "standard-deepc" else float(k.gamma)
    dcfg = DeePCConfig(
        Q_y=k.Q_y, R=k.R, lambda_g=k.lambda_g, lambda_rho=k.lambda_rho, gamma=gamma,
        regularizer=k.regularizer, confidence=k.confidence,
        U=U,
        Y=box([k.y_bounds[0]], [k.y_bounds[1]]) if k.y_bounds else None)
    return DeePCController(data, dcfg)


@dataclass
class RunResult:
    """One closed-loop run together with the data it was built from."""

    kind: str
    collection: Trajectory
    trajectory: Trajectory
    unstable: bool
    first_unstable_step: int | None
    failed: bool = False
    diagnostics: list = field(default_factory=list)

    def record(self, replicate):
        summary = state_summary(self.collection)
        stop = self.first_unstable_step
        y = np.asarray(self.trajectory.outputs, dtype=float)
        finite = y[np.isfinite(y)]
        return RunRecord(
            replicate=int(replicate),
            kind=self.kind,
            unstable=bool(self.unstable),
            first_unstable_step=stop,
            failed=bool(self.failed),
            max_abs_y=float(np.abs(finite).max()) if finite.size else float("nan"),
            mean_state_distance=mean_state_distance(self.trajectory, summary, stop),
        )


def _simulate(config, kind, collection, loop_seed, T_sim):
    plant = make_plant(config)
    threshold = config.evaluation.threshold
    controller = build_controller(config, collection, kind)
    measure_state = kind == "dc-mpc"
    try:
        traj = simulate_closed_loop(plant, controller, T_sim, seed=loop_seed,
                                    abort_threshold=threshold, measure_state=measure_state)
        failed = False
    except SolverFailure as exc:
        # an optimizer breakdown mid-loop counts as an instability
        log.warning("%s: %s", kind, exc)
        traj = exc.result
        failed = True
    traj.metadata["controller"] = kind
    traj.metadata["diagnostics"] = list(controller.diagnostics)
    unstable, step = detect_instability(traj, threshold)
    if failed:
        traj.metadata["failed"] = True
        unstable = True
        step = traj.metadata.get("failed_step") if step is None else step
    return RunResult(kind, collection, traj, unstable, step, failed, list(controller.diagnostics))


def run_single(config, replicate=0, kind=None, T_sim=None):
    """Collect data and run one closed loop.

    Parameters
    ----------
    config : ExperimentConfig
    replicate : int
        Replicate index; seeds are derived from ``(base_seed, replicate)``
        exactly as in :func:`run_montecarlo`.
    kind : str, optional
        Controller kind, defaulting to ``config.controller.kind``.
    T_sim : int, optional
        Closed-loop length, defaulting to ``config.evaluation.T_sim``.

    Returns
    -------
    RunResult
        A solver breakdown is reported with ``failed=True`` and counted as
        unstable rather than raised.
    """
    kind = kind or config.controller.kind
    if kind not in CONTROLLERS:
        raise ConfigError(f"controller.kind: must be one of {CONTROLLERS}")
    col_seed, loop_seed = replicate_seeds(config.evaluation.base_seed, replicate)
    collection = collect_data(make_plant(config), config.collection.K0, config.collection.T,
                              seed=col_seed)
    return _simulate(config, kind, collection, loop_seed,
                     config.evaluation.T_sim if T_sim is None else int(T_sim))


@dataclass(frozen=True)
class RunRecord:
    replicate: int
    kind: str
    unstable: bool
    first_unstable_step: int | None
    failed: bool
    max_abs_y: float
    mean_state_distance: float


@dataclass
class MonteCarloSummary:
    """Per-controller instability counts and the per-run records behind them."""

    n_runs: int
    base_seed: int
    T_sim: int
    unstable_count: dict
    records: list

    def unstable_fraction(self, kind):
        return self.unstable_count[kind] / self.n_runs

    def first_failures(self, kind):
        return [r.first_unstable_step for r in self.records if r.kind == kind]

    def to_dict(self):
        return {
            "n_runs": self.n_runs,
            "base_seed": self.base_seed,
            "T_sim": self.T_sim,
            "unstable_count": dict(self.unstable_count),
            "unstable_fraction": {k: self.unstable_fraction(k) for k in self.unstable_count},
            "records": [_finite_or_str(dataclasses.asdict(r)) for r in self.records],
        }

    def dump(self, path):
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        return path


def _finite_or_str(d):
    return {k: (str(v) if isinstance(v, float) and not math.isfinite(v) else v)
            for k, v in d.items()}


def _replicate(args):
    config_dict, replicate, kinds, T_sim = args
    config = ExperimentConfig.from_dict(config_dict)
    col_seed, loop_seed = replicate_seeds(config.evaluation.base_seed, replicate)
    collection = collect_data(make_plant(config), config.collection.K0, config.collection.T,
                              seed=col_seed)
    records = []
    for kind in kinds:
        try:
            run = _simulate(config, kind, collection, loop_seed, T_sim)
            records.append(run.record(replicate))
        except (NumericalError, InputError) as exc:
            # e.g. a degenerate data set; logged and counted as unstable
            log.warning("replicate %d, %s: %s", replicate, kind, exc)
            records.append(RunRecord(replicate, kind, True, 0, True, float("nan"), float("nan")))
    return records


def run_montecarlo(config, n_runs=None, kinds=None, workers=None):
    """Instability statistics over independent replicates.

    Parameters
    ----------
    config : ExperimentConfig
    n_runs : int, optional
        Number of replicates, defaulting to ``config.evaluation.n_runs``.
    kinds : sequence of str, optional
        Controllers to compare on common data and noise; defaults to
        ``[config.controller.kind]``.
    workers : int, optional
        Worker processes; ``1`` runs serially. The result does not depend on it.

    Returns
    -------
    MonteCarloSummary
        Closed loops last ``config.evaluation.T_sim_montecarlo`` steps.
    """
    n_runs = config.evaluation.n_runs if n_runs is None else int(n_runs)
    if n_runs < 1:
        raise ConfigError("evaluation.n_runs: must be a positive integer")
    kinds = [config.controller.kind] if kinds is None else list(kinds)
    for kind in kinds:
        if kind not in CONTROLLERS:
            raise ConfigError(f"controller.kind: {kind!r} is not one of {CONTROLLERS}")
    workers = config.evaluation.workers if workers is None else int(workers)
    T_sim = config.evaluation.T_sim_montecarlo
    tasks = [(config.to_dict(), i, kinds, T_sim) for i in range(n_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_replicate, tasks))
    else:
        chunks = [_replicate(t) for t in tasks]
    records = sorted((r for chunk in chunks for r in chunk),
                     key=lambda r: (r.replicate, kinds.index(r.kind)))
    counts = {k: sum(r.unstable for r in records if r.kind == k) for k in kinds}
    return MonteCarloSummary(n_runs, config.evaluation.base_seed, T_sim, counts, records)


def emit_figure_data(collection, runs, path):
    """Write state clouds for a phase-plane figure.

    Parameters
    ----------
    collection : Trajectory
        The data-collection run, written with label ``"data"``.
    runs : dict of str to Trajectory
        Closed-loop runs by label. Unstable runs are cut before their first
        offending step.
    path : str or Path
        Output directory; created if missing.

    Returns
    -------
    Path
        The manifest file, listing one entry per CSV.
    """
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        entries = []
        for label, traj in [("data", collection), *runs.items()]:
            X = np.asarray(traj.states, dtype=float)
            stop = traj.metadata.get("first_unstable_step") if traj.metadata else None
            if label != "data":
                unstable, step = detect_instability(traj, traj.metadata.get("abort_threshold", 50.0))
                stop = step if unstable else None
            X = X[:stop]
            fname = f"{label}.csv"
            with open(out / fname, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["k"] + [f"x{i + 1}" for i in range(X.shape[1])])
                for k, row in enumerate(X):
                    w.writerow([k] + [repr(float(v)) for v in row])
            entries.append({"label": label, "file": fname, "n_points": int(len(X)),
                            "unstable": bool(traj.metadata.get("unstable", False))})
        manifest = out / "manifest.json"
        manifest.write_text(json.dumps({"series": entries}, indent=1) + "\n")
    except OSError as exc:
        raise OSError(f"could not write figure data to {out}: {exc}") from exc
    return manifest
