"""Symmetric positive-definite linear operators and dense reference computations.

Operators are immutable after construction; all randomness lives in the
estimators that consume them. Dense oracles are the O(n^3) exact references
every stochastic result is validated against, capped at a configurable size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import eigvalsh, get_lapack_funcs

DEFAULT_ORACLE_CAP = 4096


class NotSpdError(ValueError):
    """Raised when an allegedly SPD matrix or operator fails a definiteness check."""


class SpdOperator:
    """A symmetric (usually positive-definite) linear map v -> A v.

    ``dense_form`` is optional; kernel-backed operators at desk scale carry it
    so that exact references are available. Derivative operators reuse this
    class but are only symmetric, not definite.
    """

    def __init__(self, dim: int, matvec: Callable[[np.ndarray], np.ndarray],
                 dense_form: Optional[np.ndarray] = None):
        if dim < 1:
            raise ValueError(f"operator dimension must be positive, got {dim}")
        self.dim = int(dim)
        self._matvec = matvec
        self.dense_form = dense_form

    @classmethod
    def from_dense(cls, a: np.ndarray) -> "SpdOperator":
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        return cls(a.shape[0], lambda v: a @ v, dense_form=a)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"matvec expected a vector of length {self.dim}, got shape {v.shape}")
        return self._matvec(v)

    def dense(self) -> np.ndarray:
        if self.dense_form is None:
            raise ValueError("operator has no dense form")
        return self.dense_form


@dataclass(frozen=True)
class DenseOracleResult:
    """Exact logdet, solve, and inverse quadratic form from one Cholesky factorization."""
    logdet: float
    solution: np.ndarray
    quad_form: float


def dense_cholesky_oracle(a: np.ndarray, y: np.ndarray,
                          max_dim: int = DEFAULT_ORACLE_CAP) -> DenseOracleResult:
    """Compute log|A|, A^{-1} y, and y^T A^{-1} y exactly via Cholesky.

    logdet is 2 * sum(log L_ii). Raises NotSpdError naming the failing pivot
    when the factorization breaks down.
    """
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if y.shape != (n,):
        raise ValueError(f"right-hand side has shape {y.shape}, expected ({n},)")
    if n > max_dim:
        raise ValueError(f"dense oracle capped at n={max_dim}, got n={n}")
    potrf, potrs = get_lapack_funcs(("potrf", "potrs"), (a,))
    c, info = potrf(a, lower=1)
    if info > 0:
        raise NotSpdError(f"matrix is not positive definite: pivot {info} failed")
    if info < 0:
        raise ValueError(f"illegal argument {-info} to Cholesky factorization")
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    solution, info = potrs(c, y, lower=1)
    if info != 0:
        raise ValueError(f"triangular solve failed with info={info}")
    return DenseOracleResult(logdet=logdet, solution=solution,
                             quad_form=float(y @ solution))


def condition_number_dense(a: np.ndarray) -> float:
    """kappa = lambda_max / lambda_min from a full symmetric eigendecomposition."""
    w = eigvalsh(np.asarray(a, dtype=float))
    if w[0] <= 0.0:
        raise NotSpdError(f"matrix is not positive definite: lambda_min = {w[0]:g}")
    return float(w[-1] / w[0])
