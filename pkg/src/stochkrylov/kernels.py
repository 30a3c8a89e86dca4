"""Kernel functions, regularized gram matrices, and analytic hyperparameter derivatives.

The regularized kernel matrix is K_hat = f^2 (K + mu I), so lambda_min(K_hat)
is at least f^2 mu. Derivatives are exact entrywise formulas:

    d K_hat / d f  = 2 f (K + mu I)
    d K_hat / d mu = f^2 I
    d K_hat / d l  = f^2 dK/dl
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import SpdOperator

RBF = "rbf"
MATERN32 = "matern32"
_FAMILIES = (RBF, MATERN32)

HYPERPARAMETERS = ("f", "l", "mu")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus hyperparameters (f: output scale, l: length-scale, mu: noise)."""
    family: str
    f: float
    l: float
    mu: float

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}, expected one of {_FAMILIES}")
        if not (self.f > 0):
            raise ValueError(f"output scale f must be positive, got {self.f}")
        if not (self.l > 0):
            raise ValueError(f"length-scale l must be positive, got {self.l}")
        if not (self.mu >= 0):
            raise ValueError(f"noise level mu must be nonnegative, got {self.mu}")

    def replace(self, **kw) -> "KernelSpec":
        d = {"family": self.family, "f": self.f, "l": self.l, "mu": self.mu}
        d.update(kw)
        return KernelSpec(**d)


@dataclass(frozen=True)
class Dataset:
    """Input points, one row per point."""
    X: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.X, dtype=float)
        if x.ndim != 2:
            raise ValueError(f"X must be 2-d (n, d), got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "X", x)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def _pairwise_distances(x: np.ndarray) -> np.ndarray:
    # expanded form with a clamp at zero; plain subtraction can go negative
    # under round-off for near-duplicate points
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    return np.sqrt(d2)


def _kernel_of_r(family: str, r: np.ndarray, l: float) -> np.ndarray:
    if family == RBF:
        return np.exp(-(r * r) / (2.0 * l * l))
    a = np.sqrt(3.0) * r / l
    return (1.0 + a) * np.exp(-a)


def _kernel_dl_of_r(family: str, r: np.ndarray, l: float) -> np.ndarray:
    if family == RBF:
        return np.exp(-(r * r) / (2.0 * l * l)) * (r * r) / l**3
    return (3.0 * r * r / l**3) * np.exp(-np.sqrt(3.0) * r / l)


def kernel_eval(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> float:
    """Evaluate the (unscaled) kernel kappa(x, y); unit value at x == y."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    r = np.array(np.linalg.norm(x - y))
    return float(_kernel_of_r(spec.family, r, spec.l))


def _symmetrize_from_upper(a: np.ndarray) -> np.ndarray:
    # construct the upper triangle, mirror it: symmetric to exactly zero
    upper = np.triu(a)
    return upper + upper.T - np.diag(np.diag(a))


def gram_matrix(spec: KernelSpec, data: Dataset) -> SpdOperator:
    """Regularized gram matrix K_hat = f^2 (kappa(X, X) + mu I) as an SPD operator."""
    r = _pairwise_distances(data.X)
    k = _kernel_of_r(spec.family, r, spec.l)
    np.fill_diagonal(k, 1.0)
    khat = spec.f**2 * (k + spec.mu * np.eye(data.n))
    return SpdOperator.from_dense(_symmetrize_from_upper(khat))


def gram_derivative(spec: KernelSpec, data: Dataset, theta: str) -> SpdOperator:
    """Symmetric operator d K_hat / d theta for theta in {'f', 'l', 'mu'}."""
    if theta not in HYPERPARAMETERS:
        raise ValueError(f"unknown hyperparameter {theta!r}, expected one of {HYPERPARAMETERS}")
    n = data.n
    if theta == "mu":
        return SpdOperator.from_dense(spec.f**2 * np.eye(n))
    r = _pairwise_distances(data.X)
    if theta == "f":
        k = _kernel_of_r(spec.family, r, spec.l)
        np.fill_diagonal(k, 1.0)
        d = 2.0 * spec.f * (k + spec.mu * np.eye(n))
    else:
        d = spec.f**2 * _kernel_dl_of_r(spec.family, r, spec.l)
    return SpdOperator.from_dense(_symmetrize_from_upper(d))
