"""Synthetic and file-based datasets for the experiment harness."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from ..kernels import Dataset


def generate_cube_dataset(n: int, d: int, side: float,
                          rng: np.random.Generator) -> Dataset:
    """n points drawn i.i.d. uniformly from [0, side]^d."""
    if n < 1 or d < 1:
        raise ValueError(f"need n, d >= 1, got n={n}, d={d}")
    if side <= 0:
        raise ValueError(f"cube side must be positive, got {side}")
    return Dataset(rng.uniform(0.0, side, size=(n, d)))


def franke(x1, x2):
    """The standard four-exponential Franke test surface on [0, 1]^2."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    t1 = 0.75 * np.exp(-((9 * x1 - 2) ** 2 + (9 * x2 - 2) ** 2) / 4.0)
    t2 = 0.75 * np.exp(-((9 * x1 + 1) ** 2) / 49.0 - (9 * x2 + 1) / 10.0)
    t3 = 0.5 * np.exp(-((9 * x1 - 7) ** 2 + (9 * x2 - 3) ** 2) / 4.0)
    t4 = -0.2 * np.exp(-((9 * x1 - 4) ** 2) - (9 * x2 - 7) ** 2)
    return t1 + t2 + t3 + t4


def generate_franke_dataset(n: int, noise_sd: float,
                            rng: np.random.Generator):
    """Uniform points in [0, 1]^2 with Franke-surface labels plus Gaussian noise."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    data = Dataset(rng.uniform(0.0, 1.0, size=(n, 2)))
    labels = franke(data.X[:, 0], data.X[:, 1])
    if noise_sd > 0:
        labels = labels + noise_sd * rng.standard_normal(n)
    return data, labels


def ingest_csv_dataset(path, label_column: str, subsample_n: int,
                       rng: np.random.Generator):
    """Load a numeric CSV with header, z-score the features, subsample rows.

    Features are normalized per column to zero mean and unit standard
    deviation (std floored at 1e-12, so constant columns map to zero).
    Subsampling is uniform without replacement, preserving row order;
    ``subsample_n`` equal to the row count keeps every row.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    frame = pd.read_csv(path)
    if label_column not in frame.columns:
        raise ValueError(f"label column {label_column!r} not in {list(frame.columns)}")
    for col in frame.columns:
        values = pd.to_numeric(frame[col], errors="coerce")
        if values.isna().any():
            bad = int(values.isna().idxmax())
            raise ValueError(f"non-numeric cell in column {col!r} at row {bad}")
        frame[col] = values
    labels = frame[label_column].to_numpy(dtype=float)
    features = frame.drop(columns=[label_column]).to_numpy(dtype=float)
    rows = features.shape[0]
    if not (1 <= subsample_n <= rows):
        raise ValueError(f"subsample_n must be in [1, {rows}], got {subsample_n}")
    if subsample_n < rows:
        idx = np.sort(rng.choice(rows, size=subsample_n, replace=False))
        features = features[idx]
        labels = labels[idx]
    mean = features.mean(axis=0)
    std = np.maximum(features.std(axis=0), 1e-12)
    return Dataset((features - mean) / std), labels
