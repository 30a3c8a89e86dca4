"""Experiment configuration: desk-scale presets, key=value files, round-tripping.

Configs serialize to flat ``key=value`` lines, the same format used both for
input config files and for the ``#``-prefixed echo block in result CSVs, so
any emitted file can be parsed back into the exact configuration that
produced it.

Desk-scale presets shrink the reference experiments onto n <= 1024 while
preserving their qualitative regime: cube sides are density-matched
(side = ref_side / (ref_n / n)^(1/3)) and length-scale grids sit in the
band where the pinned preconditioner ranks neither trivialize nor fail.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import get_type_hints

EXPERIMENTS = ("quad-sweep", "dist-compare", "reorth-variance", "nlml-sweep",
               "train-2d", "train-3d", "oracle")

# density-matched desk-scale cube sides at n = 256
CUBE_SIDE_256 = 16.0 / (4096.0 / 256.0) ** (1.0 / 3.0)       # reference: 4096 in [0,16]^3
REORTH_SIDE_256 = 10.0 / (1024.0 / 256.0) ** (1.0 / 3.0)     # reference: 1024 in [0,10]^3


@dataclass
class ExperimentConfig:
    experiment: str
    # dataset
    dataset: str = "cube"            # cube | franke | csv
    n: int = 256
    d: int = 3
    side: float = CUBE_SIDE_256
    csv_path: str = ""
    label_column: str = ""
    noise_sd: float = 0.1
    label_source: str = "uniform"    # uniform | prior
    # kernel
    kernel: str = "rbf"
    f: float = 1.0
    mu: float = 0.01
    l: float = 2.0
    l_grid: tuple = ()
    # prior-generating hyperparameters (training experiments)
    true_f: float = 1.0
    true_l: float = 2.0
    true_mu: float = 0.5
    # estimator
    i_min: int = 5
    i_max: int = 10
    dist: str = "exponential"        # exponential | geometric | gamma_optimal
    dist_c: float = 0.5
    kappa_source: str = "pilot"      # pilot | dense
    k_z: int = 1
    i_orth: int = 0                  # 0 means a full reorthogonalization window
    i_orth_grid: tuple = ()
    precond_rank: int = 0            # 0 disables preconditioning
    # optimization
    optimizer: str = "gd"
    lr: float = 0.1
    iterations: int = 1500
    init_f: float = 0.0
    init_l: float = 1.0
    init_mu: float = 1.0
    init_unconstrained: bool = False
    # run control
    replicates: int = 1000
    seed: int = 0
    threads: int = 1
    out: str = ""

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}, "
                             f"expected one of {EXPERIMENTS}")
        if self.replicates < 1:
            raise ValueError(f"replicates must be >= 1, got {self.replicates}")
        if not (1 <= self.i_min <= self.i_max <= self.n):
            raise ValueError(f"need 1 <= i_min <= i_max <= n, got "
                             f"i_min={self.i_min}, i_max={self.i_max}, n={self.n}")
        if self.n > 4096:
            raise ValueError(f"desk-scale cap is n=4096, got n={self.n}")
        self.l_grid = tuple(float(x) for x in self.l_grid)
        self.i_orth_grid = tuple(int(x) for x in self.i_orth_grid)

    def grid(self) -> tuple:
        return self.l_grid if self.l_grid else (self.l,)

    def to_kv(self) -> dict:
        out = {}
        for f_ in dataclasses.fields(self):
            out[f_.name] = _render(getattr(self, f_.name))
        return out

    @classmethod
    def from_kv(cls, kv: dict) -> "ExperimentConfig":
        hints = get_type_hints(cls)
        if "experiment" not in kv:
            raise ValueError("config needs an 'experiment' key")
        base = preset(kv["experiment"])
        values = {}
        for key, raw in kv.items():
            if key not in hints:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = _parse(raw, hints[key])
        merged = dataclasses.asdict(base)
        merged.update(values)
        return cls(**merged)


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    return str(value)


def _parse(raw: str, hint):
    raw = raw.strip()
    if hint is bool:
        if raw in ("true", "1", "yes"):
            return True
        if raw in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean from {raw!r}")
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    if hint is tuple:
        if not raw:
            return ()
        return tuple(float(tok) for tok in raw.split(","))
    return raw


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; '#' starts a comment, blank lines ignored."""
    text = Path(path).read_text(encoding="utf-8")
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = body.partition("=")
        out[key.strip()] = value.strip()
    return out


def preset(experiment: str) -> ExperimentConfig:
    """Desk-scale default configuration for each experiment."""
    if experiment == "quad-sweep":
        return ExperimentConfig(
            experiment=experiment, n=256, side=CUBE_SIDE_256, mu=0.01,
            l_grid=(0.75, 1.0, 1.5, 2.0, 2.5), i_min=5, i_max=10,
            dist="exponential", precond_rank=32, replicates=10_000,
            label_source="uniform")
    if experiment == "dist-compare":
        return ExperimentConfig(
            experiment=experiment, n=256, side=CUBE_SIDE_256, mu=0.01,
            l_grid=(2.0, 2.1, 2.2, 2.3, 2.4, 2.5), i_min=5, i_max=15,
            precond_rank=64, replicates=10_000, kappa_source="pilot",
            label_source="uniform")
    if experiment == "reorth-variance":
        return ExperimentConfig(
            experiment=experiment, n=256, side=REORTH_SIDE_256, mu=0.01,
            l_grid=(2.0, 3.0, 4.0, 5.0), i_min=30, i_max=50,
            i_orth_grid=(2, 5, 10, 0), precond_rank=0, replicates=1000,
            label_source="uniform")
    if experiment == "nlml-sweep":
        return ExperimentConfig(
            experiment=experiment, n=256, side=CUBE_SIDE_256, mu=0.01,
            l_grid=(1.0, 1.5, 2.0, 2.5, 3.0), i_min=5, i_max=15,
            precond_rank=64, replicates=100, k_z=1, label_source="prior")
    if experiment == "train-2d":
        return ExperimentConfig(
            experiment=experiment, n=200, side=200.0 ** (1.0 / 3.0),
            true_f=1.0, true_l=2.0, true_mu=0.5, label_source="prior",
            i_min=5, i_max=15, k_z=1, precond_rank=0,
            optimizer="gd", lr=0.1, iterations=1500,
            init_l=1.0, init_mu=1.0, replicates=3)
    if experiment == "train-3d":
        return ExperimentConfig(
            experiment=experiment, dataset="franke", n=256, kernel="matern32",
            noise_sd=0.1, i_min=5, i_max=15, k_z=1, precond_rank=64,
            optimizer="adam", lr=0.01, iterations=1000,
            init_f=0.0, init_l=0.0, init_mu=0.0,
            init_unconstrained=True, replicates=1)
    if experiment == "oracle":
        return ExperimentConfig(experiment=experiment, n=256, side=CUBE_SIDE_256,
                                label_source="uniform")
    raise ValueError(f"unknown experiment {experiment!r}, expected one of {EXPERIMENTS}")
