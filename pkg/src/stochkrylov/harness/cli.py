"""Command-line entry point.

One subcommand per experiment; settings come from the desk-scale preset,
overridden by --config (key=value file), overridden by explicit flags.
"""

from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, ExperimentConfig, parse_config_file, preset
from .experiments import run_experiment

_FLAG_KEYS = [
    ("seed", int), ("out", str), ("replicates", int), ("threads", int),
    ("n", int), ("d", int), ("side", float), ("dataset", str),
    ("csv-path", str), ("label-column", str), ("noise-sd", float),
    ("kernel", str), ("f", float), ("mu", float), ("l", float), ("l-grid", str),
    ("true-f", float), ("true-l", float), ("true-mu", float),
    ("i-min", int), ("i-max", int), ("dist", str), ("dist-c", float),
    ("kappa-source", str), ("k-z", int), ("i-orth", int), ("i-orth-grid", str),
    ("precond-rank", int), ("optimizer", str), ("lr", float),
    ("iterations", int), ("init-f", float), ("init-l", float), ("init-mu", float),
    ("init-unconstrained", str), ("label-source", str),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochkrylov",
        description="Stochastic Krylov estimator experiments (CSV output)")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="key=value config file", default=None)
        for flag, typ in _FLAG_KEYS:
            p.add_argument(f"--{flag}", type=str, default=None)
    return parser


def config_from_args(args) -> ExperimentConfig:
    kv = preset(args.experiment).to_kv()
    if args.config:
        file_kv = parse_config_file(args.config)
        file_kv.setdefault("experiment", args.experiment)
        if file_kv["experiment"] != args.experiment:
            raise ValueError(f"config file is for {file_kv['experiment']!r}, "
                             f"subcommand is {args.experiment!r}")
        kv.update(file_kv)
    for flag, _ in _FLAG_KEYS:
        key = flag.replace("-", "_")
        value = getattr(args, key, None)
        if value is not None:
            kv[key] = value
    kv["experiment"] = args.experiment
    return ExperimentConfig.from_kv(kv)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        out = run_experiment(cfg)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
