"""Command-line entry point: ``conformpc <command> [options]``.

Exit codes: 0 on success, 1 for invalid input or configuration, 2 for
numerical or solver failures and I/O errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .exceptions import InputError, NumericalError, SolverFailure
from .experiments import (CONTROLLERS, ConfigError, ExperimentConfig, emit_figure_data,
                          replicate_seeds, run_montecarlo, run_single, make_plant)
from .plant import collect_data
from .stats import chi2_confidence_radius

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2


def _load_config(args):
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes.setdefault("evaluation", {})["base_seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        changes.setdefault("evaluation", {})["n_runs"] = args.runs
    if getattr(args, "workers", None) is not None:
        changes.setdefault("evaluation", {})["workers"] = args.workers
    if getattr(args, "gamma", None) is not None:
        changes.setdefault("controller", {})["gamma"] = args.gamma
    if getattr(args, "out", None) is not None:
        changes["output"] = {"out_dir": str(args.out)}
    return config.replace(**changes) if changes else config


def _kinds(args, config):
    if not getattr(args, "controller", None):
        return [config.controller.kind]
    kinds = [k for item in args.controller for k in item.split(",") if k]
    for k in kinds:
        if k not in CONTROLLERS:
            raise ConfigError(f"--controller: {k!r} is not one of {CONTROLLERS}")
    return kinds


def _out_dir(config):
    out = Path(config.output.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_collect(args):
    config = _load_config(args)
    col_seed, _ = replicate_seeds(config.evaluation.base_seed, args.replicate)
    traj = collect_data(make_plant(config), config.collection.K0, config.collection.T, seed=col_seed)
    out = _out_dir(config)
    traj.to_csv(out / "collection.csv")
    traj.to_json(out / "collection.json")
    print(json.dumps({"samples": len(traj), "out": str(out)}))
    return EXIT_OK


def cmd_run(args):
    config = _load_config(args)
    kinds = _kinds(args, config)
    if len(kinds) != 1:
        raise ConfigError("--controller: run takes a single controller")
    result = run_single(config, replicate=args.replicate, kind=kinds[0])
    out = _out_dir(config)
    result.collection.to_csv(out / "collection.csv")
    result.trajectory.to_csv(out / f"{kinds[0]}.csv")
    result.trajectory.to_json(out / f"{kinds[0]}.json")
    config.dump(out / "config.json")
    rec = result.record(args.replicate)
    print(json.dumps({"controller": kinds[0], "unstable": rec.unstable,
                      "first_unstable_step": rec.first_unstable_step, "failed": rec.failed,
                      "max_abs_y": rec.max_abs_y, "out": str(out)}))
    return EXIT_OK


def cmd_montecarlo(args):
    config = _load_config(args)
    kinds = _kinds(args, config)
    summary = run_montecarlo(config, kinds=kinds)
    out = _out_dir(config)
    summary.dump(out / "montecarlo.json")
    config.dump(out / "config.json")
    print(json.dumps({"n_runs": summary.n_runs, "unstable_count": summary.unstable_count,
                      "out": str(out / "montecarlo.json")}))
    return EXIT_OK


def cmd_chi2(args):
    print(repr(chi2_confidence_radius(args.dof, args.confidence)))
    return EXIT_OK


def cmd_figure(args):
    config = _load_config(args)
    kinds = _kinds(args, config) if args.controller else ["floodgates-deepc", "standard-deepc"]
    runs, collection = {}, None
    for kind in kinds:
        result = run_single(config, replicate=args.replicate, kind=kind)
        collection = result.collection
        runs[kind.replace("-deepc", "")] = result.trajectory
    manifest = emit_figure_data(collection, runs, _out_dir(config) / "figure")
    print(json.dumps({"manifest": str(manifest)}))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are validation errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(
        prog="conformpc",
        description="Data-driven predictive control experiments on the benchmark plant.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver warnings")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=True, out=True):
        p.add_argument("--config", help="JSON configuration file")
        if seed:
            p.add_argument("--seed", type=int, help="base seed (overrides the config)")
            p.add_argument("--replicate", type=int, default=0,
                           help="replicate index used to derive the seeds (default 0)")
        if out:
            p.add_argument("--out", help="output directory (overrides the config)")

    p = sub.add_parser("collect", help="simulate the data-collection experiment")
    common(p)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("run", help="one closed-loop run")
    common(p)
    p.add_argument("--controller", action="append", help=f"one of {', '.join(CONTROLLERS)}")
    p.add_argument("--gamma", type=float, help="regularization weight")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("montecarlo", help="instability rates over seeded replicates")
    common(p)
    p.add_argument("--controller", action="append",
                   help="controller(s), comma separated or repeated")
    p.add_argument("--gamma", type=float, help="regularization weight")
    p.add_argument("--runs", type=int, help="number of replicates")
    p.add_argument("--workers", type=int, help="worker processes")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("chi2", help="print the chi-squared confidence radius d*")
    p.add_argument("--dof", type=int, required=True, help="degrees of freedom")
    p.add_argument("--confidence", type=float, default=0.95, help="confidence level 1 - delta")
    p.set_defaults(func=cmd_chi2)

    p = sub.add_parser("figure", help="emit phase-plane state clouds for plotting")
    common(p)
    p.add_argument("--controller", action="append", help="controllers to include")
    p.add_argument("--gamma", type=float, help="regularization weight")
    p.set_defaults(func=cmd_figure)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, SolverFailure, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
