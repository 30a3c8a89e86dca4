"""Gaussian-process negative log marginal likelihood: exact oracles and
stochastic estimators assembled from the Krylov building blocks.

The NLML of a model with regularized kernel matrix K_hat is

    L = (y' K_hat^{-1} y + log|K_hat| + n log 2pi) / 2
    dL/dtheta = -(y' K_hat^{-1} (dK_hat/dtheta) K_hat^{-1} y
                  - tr(K_hat^{-1} dK_hat/dtheta)) / 2

The estimated version replaces the solve by a TSS or truncated CG estimate,
the log-determinant by stochastic Lanczos quadrature, and the trace by
Hutchinson probes with iterative solves. The quadratic value and gradient
terms share one truncation draw; the gradient's product uses a second
independent draw to keep its expectation factorized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .estimators import TruncatedSolver, TssSolver, slq_logdet, tss_solve, resolve_dist
from .kernels import Dataset, HYPERPARAMETERS, KernelSpec, gram_derivative, gram_matrix
from .krylov import FULL, ReorthPolicy, cg_run
from .operators import DEFAULT_ORACLE_CAP, NotSpdError, dense_cholesky_oracle
from .precond import build_pivoted_cholesky
from .truncation import DistSpec, LOGQF, SOLVE

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GpModel:
    data: Dataset
    y: np.ndarray
    spec: KernelSpec

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.shape != (self.data.n,):
            raise ValueError(f"labels have shape {y.shape}, expected ({self.data.n},)")
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.data.n

    def with_spec(self, spec: KernelSpec) -> "GpModel":
        return GpModel(self.data, self.y, spec)


def nlml_exact(model: GpModel, max_dim: int = DEFAULT_ORACLE_CAP) -> float:
    khat = gram_matrix(model.spec, model.data).dense()
    oracle = dense_cholesky_oracle(khat, model.y, max_dim=max_dim)
    return 0.5 * (oracle.quad_form + oracle.logdet + model.n * LOG_2PI)


def nlml_grad_exact(model: GpModel, max_dim: int = DEFAULT_ORACLE_CAP) -> dict:
    khat = gram_matrix(model.spec, model.data).dense()
    if model.n > max_dim:
        raise ValueError(f"dense oracle capped at n={max_dim}, got n={model.n}")
    try:
        factor = cho_factor(khat, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotSpdError(f"kernel matrix is not positive definite: {exc}") from exc
    alpha = cho_solve(factor, model.y)
    kinv = cho_solve(factor, np.eye(model.n))
    grads = {}
    for theta in HYPERPARAMETERS:
        d = gram_derivative(model.spec, model.data, theta).dense()
        quad = float(alpha @ (d @ alpha))
        trace = float(np.sum(kinv * d))
        grads[theta] = -0.5 * (quad - trace)
    return grads


def sample_labels_from_prior(spec: KernelSpec, data: Dataset,
                             rng: np.random.Generator) -> np.ndarray:
    """Draw y ~ N(0, K_hat) via the dense Cholesky factor."""
    khat = gram_matrix(spec, data).dense()
    try:
        chol = np.linalg.cholesky(khat)
    except np.linalg.LinAlgError as exc:
        raise NotSpdError(f"prior covariance is not positive definite: {exc}") from exc
    return chol @ rng.standard_normal(data.n)


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings for the stochastic NLML estimators.

    Exactly one of ``dist_spec`` (TSS truncation recipe) and ``m``
    (deterministic truncation depth) must be set. ``precond_rank`` of None
    disables preconditioning; otherwise a pivoted-Cholesky preconditioner of
    that rank (with shift f^2 mu) is built per evaluation.
    """
    dist_spec: Optional[DistSpec] = None
    m: Optional[int] = None
    k_z: int = 1
    policy: ReorthPolicy = FULL
    precond_rank: Optional[int] = None

    def __post_init__(self):
        if (self.dist_spec is None) == (self.m is None):
            raise ValueError("exactly one of dist_spec and m must be set")
        if self.k_z < 1:
            raise ValueError(f"need at least one probe, got k_z={self.k_z}")


class _Context:
    """Operators, preconditioner, and resolved solvers for one evaluation."""

    def __init__(self, model: GpModel, cfg: EstimatorConfig, rng: np.random.Generator):
        self.op = gram_matrix(model.spec, model.data)
        self.d_ops = {theta: gram_derivative(model.spec, model.data, theta)
                      for theta in HYPERPARAMETERS}
        spec = model.spec
        if cfg.precond_rank is not None:
            eta = spec.f**2 * max(spec.mu, 1e-12)
            self.precond = build_pivoted_cholesky(self.op, cfg.precond_rank, eta)
            floor = None
        else:
            self.precond = None
            floor = spec.f**2 * spec.mu if spec.mu > 0 else None
        if cfg.dist_spec is not None:
            solve_dist, self.kappa_solve = resolve_dist(
                cfg.dist_spec, SOLVE, self.op, rng, precond=self.precond,
                lambda_min_floor=floor)
            logqf_dist, self.kappa_logqf = resolve_dist(
                cfg.dist_spec, LOGQF, self.op, rng, precond=self.precond,
                lambda_min_floor=floor)
            self.solve_solver = TssSolver(solve_dist)
            self.logqf_solver = TssSolver(logqf_dist)
        else:
            self.solve_solver = TruncatedSolver(cfg.m)
            self.logqf_solver = TruncatedSolver(cfg.m)
            self.kappa_solve = self.kappa_logqf = None

    def solve(self, rhs, rng):
        if isinstance(self.solve_solver, TruncatedSolver):
            trace = cg_run(self.op, rhs, self.solve_solver.m, precond=self.precond)
            return trace.iterate(self.solve_solver.m)
        return tss_solve(self.op, rhs, self.solve_solver.dist, rng,
                         precond=self.precond).estimate


def _nlml_stochastic(model: GpModel, cfg: EstimatorConfig, rng: np.random.Generator,
                     want_value: bool, want_grad: bool):
    ctx = _Context(model, cfg, rng)
    n = model.n
    value = None
    grads = None
    x1 = ctx.solve(model.y, rng)
    if want_grad:
        if isinstance(ctx.solve_solver, TruncatedSolver):
            x2 = x1
        else:
            x2 = ctx.solve(model.y, rng)  # independent draw: unbiased product
    if want_value:
        logdet = slq_logdet(ctx.op, cfg.k_z, ctx.logqf_solver, rng,
                            precond=ctx.precond, policy=cfg.policy)
        value = 0.5 * (float(model.y @ x1) + logdet + n * LOG_2PI)
    if want_grad:
        quad_terms = {theta: float(x1 @ ctx.d_ops[theta].matvec(x2))
                      for theta in HYPERPARAMETERS}
        trace_terms = {theta: 0.0 for theta in HYPERPARAMETERS}
        for _ in range(cfg.k_z):
            z = rng.standard_normal(n)
            u = ctx.solve(z, rng)
            for theta in HYPERPARAMETERS:
                trace_terms[theta] += float(u @ ctx.d_ops[theta].matvec(z))
        grads = {theta: -0.5 * (quad_terms[theta] - trace_terms[theta] / cfg.k_z)
                 for theta in HYPERPARAMETERS}
    return value, grads


def nlml_estimate(model: GpModel, cfg: EstimatorConfig, rng: np.random.Generator) -> float:
    value, _ = _nlml_stochastic(model, cfg, rng, want_value=True, want_grad=False)
    return value


def nlml_grad_estimate(model: GpModel, cfg: EstimatorConfig,
                       rng: np.random.Generator) -> dict:
    _, grads = _nlml_stochastic(model, cfg, rng, want_value=False, want_grad=True)
    return grads


def nlml_value_and_grad_estimate(model: GpModel, cfg: EstimatorConfig,
                                 rng: np.random.Generator):
    """Joint evaluation sharing the quadratic-form solve between value and gradient."""
    return _nlml_stochastic(model, cfg, rng, want_value=True, want_grad=True)
