"""CG/PCG and Lanczos iterations with windowed reorthogonalization.

Both iterations record enough per-step state to reconstruct any leading
iterate or tridiagonal section afterwards: CG keeps the iterate increments
x_j - x_{j-1} and recurrence scalars, Lanczos keeps the tridiagonal
coefficients. The CG scalars reconstruct the Lanczos tridiagonal of the same
Krylov space via

    T[0, 0] = 1/alpha_0
    T[k, k] = 1/alpha_k + beta_{k-1}/alpha_{k-1}
    T[k, k+1] = T[k+1, k] = sqrt(beta_k)/alpha_k

With a preconditioner, CG runs standard PCG (recording the preconditioned
recurrence scalars) and Lanczos iterates the symmetrically preconditioned
operator M^{-1/2} A M^{-1/2}.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .operators import NotSpdError, SpdOperator

BREAKDOWN_RTOL = 1e-14


@dataclass(frozen=True)
class ReorthPolicy:
    """Reorthogonalization window: the new Krylov vector is reorthogonalized
    against the last min(i_orth - 1, k - 1) stored basis vectors.

    ``i_orth=None`` means a full window; ``i_orth=1`` disables
    reorthogonalization beyond the three-term recurrence.
    """
    i_orth: Optional[int] = None

    def __post_init__(self):
        if self.i_orth is not None and self.i_orth < 1:
            raise ValueError(f"i_orth must be >= 1, got {self.i_orth}")

    @staticmethod
    def full() -> "ReorthPolicy":
        return ReorthPolicy(None)

    @staticmethod
    def window(i_orth: int) -> "ReorthPolicy":
        return ReorthPolicy(int(i_orth))

    @property
    def is_full(self) -> bool:
        return self.i_orth is None

    def label(self) -> str:
        return "full" if self.is_full else str(self.i_orth)


FULL = ReorthPolicy.full()


@dataclass
class CgTrace:
    """Per-iteration record of a CG or PCG run.

    ``increments[j]`` is x_{j+1} - x_j, so partial sums of increments plus x0
    reproduce every iterate. ``converged`` marks a clean early stop (residual
    or search-direction breakdown before the iteration cap).
    """
    increments: list
    alphas: list
    betas: list
    residual_norms: list
    x0: np.ndarray
    converged: bool

    @property
    def m(self) -> int:
        return len(self.increments)

    def iterate(self, j: int) -> np.ndarray:
        """x_j; indices beyond the recorded run return the converged iterate."""
        if j < 0:
            raise ValueError(f"iterate index must be >= 0, got {j}")
        j = min(j, self.m)
        x = self.x0.copy()
        for inc in self.increments[:j]:
            x += inc
        return x

    def increment(self, j: int) -> np.ndarray:
        """Delta_j = x_j - x_{j-1} for j >= 1; zero beyond the recorded run."""
        if j < 1:
            raise ValueError(f"increment index must be >= 1, got {j}")
        if j > self.m:
            return np.zeros_like(self.x0)
        return self.increments[j - 1]


@dataclass
class LanczosTrace:
    """Tridiagonal coefficients of a Lanczos run; offdiagonal entries are >= 0.

    ``basis`` is populated only when the run is asked to keep it; the
    reorthogonalization window is independent of what is kept.
    """
    diag: list
    offdiag: list
    converged: bool
    basis: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return len(self.diag)

    def tridiagonal(self, j: Optional[int] = None) -> np.ndarray:
        j = self.m if j is None else j
        if not (1 <= j <= self.m):
            raise ValueError(f"requested leading section {j} of a {self.m}-step trace")
        t = np.diag(np.asarray(self.diag[:j]))
        if j > 1:
            off = np.asarray(self.offdiag[: j - 1])
            t += np.diag(off, 1) + np.diag(off, -1)
        return t

    def ritz_values(self, j: Optional[int] = None) -> np.ndarray:
        j = self.m if j is None else j
        if j == 1:
            return np.array([self.diag[0]])
        return eigh_tridiagonal(np.asarray(self.diag[:j]),
                                np.asarray(self.offdiag[: j - 1]),
                                eigvals_only=True)


def cg_run(op: SpdOperator, y: np.ndarray, m: int,
           precond=None, rtol: float = 0.0, x0: Optional[np.ndarray] = None) -> CgTrace:
    """Run up to m iterations of (P)CG on A x = y, recording increments.

    x0 defaults to zero (the estimators rely on that); a nonzero x0 is
    supported for standalone solves, with increments taken relative to it.
    Raises NotSpdError if a search direction has nonpositive curvature.
    """
    y = np.asarray(y, dtype=float)
    if m < 1:
        raise ValueError(f"iteration cap must be >= 1, got {m}")
    n = op.dim
    if x0 is None:
        x0 = np.zeros(n)
        r = y.copy()
    else:
        x0 = np.asarray(x0, dtype=float).copy()
        r = y - op.matvec(x0)
    z = precond.apply_minv(r) if precond is not None else r
    p = z.copy()
    rz = float(r @ z)
    r0_norm = float(np.linalg.norm(r))
    increments, alphas, betas, residual_norms = [], [], [], []
    converged = False
    if rz == 0.0:
        return CgTrace(increments, alphas, betas, residual_norms, x0, True)
    if rz < 0.0:
        raise NotSpdError("preconditioner is not positive definite: r'M^{-1}r < 0")
    for j in range(m):
        ap = op.matvec(p)
        pap = float(p @ ap)
        if pap <= 0.0:
            raise NotSpdError(f"nonpositive curvature p'Ap = {pap:g} at CG iteration {j + 1}")
        alpha = rz / pap
        increments.append(alpha * p)
        alphas.append(alpha)
        r = r - alpha * ap
        res = float(np.linalg.norm(r))
        residual_norms.append(res)
        z = precond.apply_minv(r) if precond is not None else r
        rz_new = float(r @ z)
        if rz_new <= 0.0:
            # exact breakdown (or a nonpositive preconditioned product at
            # round-off level): the iteration has converged
            converged = True
            break
        beta = rz_new / rz
        betas.append(beta)
        rz = rz_new
        if res <= rtol * r0_norm:
            converged = True
            break
        p = z + beta * p
    return CgTrace(increments, alphas, betas, residual_norms, x0, converged)


def _preconditioned_matvec(op: SpdOperator, precond):
    if precond is None:
        return op.matvec
    return lambda v: precond.apply_minv_sqrt(op.matvec(precond.apply_minv_sqrt(v)))


def lanczos_run(op: SpdOperator, q1: np.ndarray, m: int,
                policy: ReorthPolicy = FULL, precond=None,
                keep_basis: bool = False) -> LanczosTrace:
    """Run m Lanczos steps from a unit starting vector.

    Each new vector is reorthogonalized with one pass of modified
    Gram-Schmidt against the policy's window of stored basis vectors, most
    recent first. A sub-breakdown offdiagonal (relative to the running
    Frobenius norm of T) truncates the trace: a lucky breakdown.
    """
    q = np.asarray(q1, dtype=float)
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > 1e-12:
        raise ValueError(f"starting vector must have unit norm, got {norm!r}")
    if not (1 <= m <= op.dim):
        raise ValueError(f"step count must be in [1, {op.dim}], got {m}")
    matvec = _preconditioned_matvec(op, precond)
    # previous basis vectors, excluding the current one: the recurrence itself
    # orthogonalizes against the current vector, the window adds one MGS pass
    # over the most recent min(i_orth - 1, k - 1) older vectors
    if policy.is_full:
        prev_basis: deque = deque()
    else:
        prev_basis = deque(maxlen=policy.i_orth - 1)
    diag, offdiag = [], []
    kept = [q] if keep_basis else None
    q_prev = np.zeros_like(q)
    beta_prev = 0.0
    fro_sq = 0.0
    converged = False
    for k in range(m):
        w = matvec(q) - beta_prev * q_prev
        alpha = float(q @ w)
        w = w - alpha * q
        for u in reversed(prev_basis):
            w = w - float(u @ w) * u
        diag.append(alpha)
        fro_sq += alpha * alpha + 2.0 * beta_prev * beta_prev
        beta = float(np.linalg.norm(w))
        if k == m - 1:
            break
        if beta <= BREAKDOWN_RTOL * np.sqrt(max(fro_sq, 1.0)):
            converged = True
            break
        offdiag.append(beta)
        if prev_basis.maxlen != 0:
            prev_basis.append(q)
        q_prev = q
        q = w / beta
        if keep_basis:
            kept.append(q)
        beta_prev = beta
    basis = np.column_stack(kept) if keep_basis else None
    return LanczosTrace(diag, offdiag, converged, basis)


def cg_to_tridiagonal(trace: CgTrace, j: int) -> np.ndarray:
    """Reconstruct the j x j Lanczos tridiagonal from CG recurrence scalars."""
    if not (1 <= j <= trace.m):
        raise ValueError(f"requested tridiagonal section {j} of a {trace.m}-iteration trace")
    alphas = trace.alphas
    betas = trace.betas
    t = np.zeros((j, j))
    t[0, 0] = 1.0 / alphas[0]
    for k in range(1, j):
        t[k, k] = 1.0 / alphas[k] + betas[k - 1] / alphas[k - 1]
        off = np.sqrt(betas[k - 1]) / alphas[k - 1]
        t[k - 1, k] = off
        t[k, k - 1] = off
    return t


def estimate_condition_number(op: SpdOperator, rng: np.random.Generator,
                              precond=None, pilot_steps: int = 30,
                              lambda_min_floor: Optional[float] = None) -> float:
    """Bracket kappa from the Ritz values of a pilot Lanczos run.

    The largest Ritz value is inflated by 5% and the smallest deflated by 50%
    (Ritz values approach the spectrum from the inside), optionally floored by
    a known lower bound on lambda_min such as f^2 mu for regularized kernel
    matrices.
    """
    if pilot_steps < 2:
        raise ValueError(f"pilot_steps must be >= 2, got {pilot_steps}")
    v = rng.standard_normal(op.dim)
    q1 = v / np.linalg.norm(v)
    trace = lanczos_run(op, q1, min(pilot_steps, op.dim), policy=FULL, precond=precond)
    ritz = trace.ritz_values()
    if ritz[0] <= 0.0:
        raise NotSpdError(f"pilot Lanczos produced a nonpositive Ritz value {ritz[0]:g}")
    lam_max = 1.05 * float(ritz[-1])
    lam_min = 0.5 * float(ritz[0])
    if lambda_min_floor is not None:
        lam_min = max(lam_min, lambda_min_floor)
    return max(lam_max / lam_min, 1.0)
