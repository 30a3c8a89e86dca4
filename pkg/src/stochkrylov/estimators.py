"""Truncated single-sample (TSS) Krylov estimators and their exact moments.

A quantity reachable by a Krylov iteration is a sum of per-iteration
increments, Phi = sum_i Delta_i. Truncating at a fixed m biases the result;
drawing the truncation index Q from a pmf on {i_min, ..., i_max} and
returning

    Delta_Q / P(Q)  +  sum_{i < i_min} Delta_i

has expectation equal to the i_max-truncated value at an expected cost of
E[Q] iterations. Two instances are provided: TSS-Solve over CG iterate
increments, and scalar Lanczos quadrature (TSS-LogQF for e1' log(T_j) e1,
plus the analogous inverse quadratic form). Classical single-sample and
Russian-roulette estimators over the full support are included as baselines.

Estimators draw all randomness from an explicit generator; given the
generator state they are pure. Early convergence needs no special casing:
increments beyond a breakdown are exactly zero, so the estimator returns the
converged quantity unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .krylov import FULL, LanczosTrace, ReorthPolicy, cg_run, \
    estimate_condition_number, lanczos_run
from .operators import NotSpdError, SpdOperator, condition_number_dense
from .precond import logdet_m
from .truncation import DistSpec, GammaFactor, LOGQF, SOLVE, \
    TruncationDistribution, rho_logqf, rho_solve, sample

LOG = "log"
INV = "inv"

SOLVE_OPTIMAL = "solve_optimal"
LOGQF_OPTIMAL = "logqf_optimal"


@dataclass(frozen=True)
class TruncatedSolver:
    """Deterministic truncation after m iterations."""
    m: int


@dataclass(frozen=True)
class TssSolver:
    """Randomized truncation with index drawn from ``dist``."""
    dist: TruncationDistribution


Solver = Union[TruncatedSolver, TssSolver]


@dataclass
class TssSolveResult:
    estimate: np.ndarray
    sampled_q: int
    iterations_run: int
    converged: bool
    expected_target: str

    @property
    def cost_matvecs(self) -> int:
        return self.iterations_run


@dataclass
class TssScalarResult:
    estimate: float
    sampled_q: int
    iterations_run: int
    probe_norm_sq: float
    converged: bool

    @property
    def scaled_estimate(self) -> float:
        return self.probe_norm_sq * self.estimate


def tss_solve(op: SpdOperator, y: np.ndarray, dist: TruncationDistribution,
              rng: np.random.Generator, precond=None) -> TssSolveResult:
    """TSS-Solve: (x_Q - x_{Q-1}) / P(Q) + x_{i_min - 1} from a Q-step (P)CG run.

    The expectation over Q is the i_max-th (P)CG iterate. If CG breaks down
    before i_min the converged solution is returned with ``sampled_q`` set to
    the breakdown step and the convergence flag raised.
    """
    if dist.i_max > op.dim:
        raise ValueError(f"i_max={dist.i_max} exceeds operator dimension {op.dim}")
    q = sample(dist, rng)
    trace = cg_run(op, y, q, precond=precond)
    x_lead = trace.iterate(dist.i_min - 1)
    estimate = x_lead + trace.increment(q) / dist.prob(q)
    converged = trace.m < q
    sampled = trace.m if (converged and trace.m < dist.i_min) else q
    return TssSolveResult(estimate=estimate, sampled_q=sampled,
                          iterations_run=trace.m, converged=converged,
                          expected_target=f"x_{dist.i_max}")


def ss_solve(op: SpdOperator, y: np.ndarray, dist: TruncationDistribution,
             rng: np.random.Generator) -> np.ndarray:
    """Single-sample estimator Delta_Q / P(Q); requires full support {1..n}."""
    if dist.i_min != 1 or dist.i_max != op.dim:
        raise ValueError(f"single-sample estimator needs support [1, {op.dim}], "
                         f"got [{dist.i_min}, {dist.i_max}]")
    q = sample(dist, rng)
    trace = cg_run(op, y, q)
    return trace.increment(q) / dist.prob(q)


def rr_solve(op: SpdOperator, y: np.ndarray, dist: TruncationDistribution,
             rng: np.random.Generator) -> np.ndarray:
    """Russian-roulette estimator sum_{i <= Q} Delta_i / P(Q >= i)."""
    q = sample(dist, rng)
    trace = cg_run(op, y, q)
    survival = dist.survival()
    out = np.zeros(op.dim)
    for i in range(1, q + 1):
        weight = 1.0 if i < dist.i_min else survival[i - dist.i_min]
        out += trace.increment(i) / weight
    return out


def _scalar_quadrature(trace: LanczosTrace, j: int, fn: str) -> float:
    """s_j = e1' fn(T_j) e1 via tridiagonal eigendecomposition; s_0 = 0.

    Sections beyond the recorded trace return s_m (increments after a lucky
    breakdown are exactly zero).
    """
    if j <= 0:
        return 0.0
    j = min(j, trace.m)
    if j == 1:
        vals = np.array([trace.diag[0]])
        weights = np.array([1.0])
    else:
        vals, vecs = eigh_tridiagonal(np.asarray(trace.diag[:j]),
                                      np.asarray(trace.offdiag[: j - 1]))
        weights = vecs[0, :] ** 2
    if np.any(vals <= 0.0):
        raise NotSpdError(f"nonpositive Ritz value {vals.min():g} in T_{j}; "
                          f"matrix function undefined")
    f = np.log(vals) if fn == LOG else 1.0 / vals
    return float(weights @ f)


def _tss_lanczos_scalar(op: SpdOperator, start: np.ndarray, dist: TruncationDistribution,
                        fn: str, rng: np.random.Generator, precond=None,
                        policy: ReorthPolicy = FULL) -> TssScalarResult:
    norm_sq = float(start @ start)
    if norm_sq == 0.0:
        raise ValueError("starting vector must be nonzero")
    if dist.i_max > op.dim:
        raise ValueError(f"i_max={dist.i_max} exceeds operator dimension {op.dim}")
    q = sample(dist, rng)
    trace = lanczos_run(op, start / np.sqrt(norm_sq), q, policy=policy, precond=precond)
    s_lead = _scalar_quadrature(trace, dist.i_min - 1, fn)
    delta_q = _scalar_quadrature(trace, q, fn) - _scalar_quadrature(trace, q - 1, fn)
    estimate = s_lead + delta_q / dist.prob(q)
    converged = trace.m < q
    sampled = trace.m if (converged and trace.m < dist.i_min) else q
    return TssScalarResult(estimate=estimate, sampled_q=sampled,
                           iterations_run=trace.m, probe_norm_sq=norm_sq,
                           converged=converged)


def tss_logqf(op: SpdOperator, z: np.ndarray, dist: TruncationDistribution,
              rng: np.random.Generator, precond=None,
              policy: ReorthPolicy = FULL) -> TssScalarResult:
    """TSS-LogQF: s_{i_min-1} + (s_Q - s_{Q-1}) / P(Q) with s_j = e1' log(T_j) e1.

    Targets z' log(A) z / ||z||^2 (the preconditioned operator's quadratic
    form when a preconditioner is given); the expectation over Q is s_{i_max}.
    """
    z = np.asarray(z, dtype=float)
    return _tss_lanczos_scalar(op, z, dist, LOG, rng, precond=precond, policy=policy)


def tss_invqf(op: SpdOperator, y: np.ndarray, dist: TruncationDistribution,
              rng: np.random.Generator, precond=None,
              policy: ReorthPolicy = FULL) -> TssScalarResult:
    """TSS estimate of the inverse quadratic form via Lanczos quadrature.

    ``scaled_estimate`` targets the i_max-step approximation of y' A^{-1} y:
    in exact arithmetic ||y||^2 e1' T_j^{-1} e1 equals y' x_j for the CG
    iterates, but this path goes through the (windowed) reorthogonalized
    Lanczos recurrence, which is the numerically stable route.
    """
    y = np.asarray(y, dtype=float)
    start = precond.apply_minv_sqrt(y) if precond is not None else y
    return _tss_lanczos_scalar(op, start, dist, INV, rng, precond=precond, policy=policy)


def tss_exact_moments(deltas, dist: TruncationDistribution):
    """Exact mean and variance of a TSS estimator from its increments.

    ``deltas`` must cover indices 1..i_max (vectors or scalars). Returns
    (sum_{i <= i_max} Delta_i,
     sum_j ||Delta_j||^2 / P(Q=j) - ||sum_{j >= i_min} Delta_j||^2).
    """
    arr = np.asarray(deltas, dtype=float)
    if arr.shape[0] < dist.i_max:
        raise ValueError(f"need increments 1..{dist.i_max}, got {arr.shape[0]}")
    arr = arr[: dist.i_max]
    mean = arr.sum(axis=0)
    window = arr[dist.i_min - 1 : dist.i_max]
    norms_sq = (window * window).sum(axis=tuple(range(1, arr.ndim)))
    delta_star = window.sum(axis=0)
    variance = float((norms_sq / dist.pmf).sum() - (delta_star * delta_star).sum())
    return mean, variance


@dataclass
class EnumeratedTss:
    """Per-outcome estimates over the truncation support, with exact moments."""
    dist: TruncationDistribution
    estimates: np.ndarray      # (K,) scalars or (K, n) vectors, K = support size
    deltas: np.ndarray         # increments 1..i_max
    mean: np.ndarray
    variance: float

    def sample_values(self, rng: np.random.Generator, draws: int) -> np.ndarray:
        """Monte-Carlo draws of the estimator by sampling Q (scalar case)."""
        idx = rng.choice(len(self.dist.pmf), size=draws, p=self.dist.pmf)
        return self.estimates[idx]


def _moments_from_estimates(dist, estimates):
    pmf = dist.pmf
    if estimates.ndim == 1:
        mean = float(np.dot(pmf, estimates))
        var = float(np.dot(pmf, (estimates - mean) ** 2))
        return np.asarray(mean), var
    mean = pmf @ estimates
    var = float(np.dot(pmf, ((estimates - mean) ** 2).sum(axis=1)))
    return mean, var


def enumerate_tss_solve(op: SpdOperator, y: np.ndarray, dist: TruncationDistribution,
                        precond=None) -> EnumeratedTss:
    """All TSS-Solve outcomes from one deterministic (P)CG run to i_max.

    CG iterations never look ahead, so a Q-step run is bitwise the prefix of
    the i_max-step run and the enumeration is exact.
    """
    trace = cg_run(op, y, dist.i_max, precond=precond)
    deltas = np.array([trace.increment(j) for j in range(1, dist.i_max + 1)])
    x_lead = trace.iterate(dist.i_min - 1)
    estimates = np.array([x_lead + deltas[j - 1] / dist.prob(j)
                          for j in dist.support])
    mean, var = _moments_from_estimates(dist, estimates)
    return EnumeratedTss(dist, estimates, deltas, mean, var)


def enumerate_tss_scalar(op: SpdOperator, start: np.ndarray, dist: TruncationDistribution,
                         fn: str = LOG, precond=None,
                         policy: ReorthPolicy = FULL) -> EnumeratedTss:
    """All TSS outcomes of a scalar Lanczos quadrature from one run to i_max."""
    start = np.asarray(start, dtype=float)
    if fn == INV and precond is not None:
        start = precond.apply_minv_sqrt(start)
    norm = np.linalg.norm(start)
    trace = lanczos_run(op, start / norm, dist.i_max, policy=policy, precond=precond)
    s = np.array([_scalar_quadrature(trace, j, fn) for j in range(dist.i_max + 1)])
    deltas = np.diff(s)
    estimates = np.array([s[dist.i_min - 1] + deltas[j - 1] / dist.prob(j)
                          for j in dist.support])
    mean, var = _moments_from_estimates(dist, estimates)
    return EnumeratedTss(dist, estimates, deltas, mean, var)


@dataclass(frozen=True)
class VarianceBound:
    bound: float
    kappa: float
    gamma: float
    flavor: str


def variance_bound(flavor: str, kappa: float, gamma: GammaFactor,
                   x_norm_sq: Optional[float] = None) -> VarianceBound:
    """Theoretical variance bounds for the TSS estimators.

    'solve':  16 kappa^2 ||x||^2 Gamma
    'logqf':  16 (sqrt(kappa+1) + 1)^2 log^2(2 kappa) Gamma
    The '*_optimal' flavors substitute the closed-form optimal Gamma with the
    simplified prefactors (equivalent to evaluating the generic bound at the
    optimal Gamma).
    """
    if kappa < 1.0:
        raise ValueError(f"condition number must be >= 1, got {kappa}")
    i1, i2 = gamma.i_min, gamma.i_max
    if flavor == SOLVE:
        if x_norm_sq is None:
            raise ValueError("solve-flavor bound needs ||x||^2")
        bound = 16.0 * kappa**2 * x_norm_sq * gamma.value
    elif flavor == LOGQF:
        bound = 16.0 * (np.sqrt(kappa + 1.0) + 1.0) ** 2 * np.log(2.0 * kappa) ** 2 * gamma.value
    elif flavor == SOLVE_OPTIMAL:
        if x_norm_sq is None:
            raise ValueError("solve-flavor bound needs ||x||^2")
        rho = rho_solve(kappa)
        bound = (4.0 * kappa**2 * x_norm_sq * rho ** (2 * (i1 - 1))
                 * (rho ** (i2 - i1 + 1) - 1.0) ** 2 * (np.sqrt(kappa) + 1.0) ** 2)
    elif flavor == LOGQF_OPTIMAL:
        rho = rho_logqf(kappa)
        bound = ((np.sqrt(kappa + 1.0) + 1.0) ** 6 * np.log(2.0 * kappa) ** 2 / (kappa + 1.0)
                 * rho ** (4 * (i1 - 1)) * (rho ** (2 * (i2 - i1 + 1)) - 1.0) ** 2)
    else:
        raise ValueError(f"unknown variance-bound flavor {flavor!r}")
    return VarianceBound(float(bound), kappa, gamma.value, flavor)


def _solution_estimate(op, rhs, solver: Solver, rng, precond):
    if isinstance(solver, TruncatedSolver):
        trace = cg_run(op, rhs, solver.m, precond=precond)
        return trace.iterate(solver.m), trace.m
    res = tss_solve(op, rhs, solver.dist, rng, precond=precond)
    return res.estimate, res.iterations_run


def quad_form_estimate(op: SpdOperator, y: np.ndarray, solver: Solver,
                       rng: Optional[np.random.Generator] = None, precond=None) -> float:
    """y' x with x the truncated or TSS solution estimate for A x = y."""
    y = np.asarray(y, dtype=float)
    x, _ = _solution_estimate(op, y, solver, rng, precond)
    return float(y @ x)


def quad_form_grad_estimate(op: SpdOperator, d_op: SpdOperator, y: np.ndarray,
                            solver: Solver, rng: Optional[np.random.Generator] = None,
                            precond=None) -> float:
    """Estimate of y' A^{-1} (dA/dtheta) A^{-1} y.

    The TSS variant uses two independent truncation draws so the expectation
    factorizes over the two solution factors; squaring a single draw would
    bias the product.
    """
    y = np.asarray(y, dtype=float)
    if isinstance(solver, TruncatedSolver):
        x, _ = _solution_estimate(op, y, solver, rng, precond)
        return float(x @ d_op.matvec(x))
    left = tss_solve(op, y, solver.dist, rng, precond=precond).estimate
    right = tss_solve(op, y, solver.dist, rng, precond=precond).estimate
    return float(left @ d_op.matvec(right))


def hutchinson_trace_derivative(op: SpdOperator, d_op: SpdOperator, k_z: int,
                                solver: Solver, rng: np.random.Generator,
                                precond=None) -> float:
    """Hutchinson estimate of tr(A^{-1} dA/dtheta) with iterative solves.

    Averages u' (dA/dtheta) z over standard-normal probes z, where u
    estimates A^{-1} z via the chosen solver.
    """
    if k_z < 1:
        raise ValueError(f"need at least one probe, got k_z={k_z}")
    total = 0.0
    for _ in range(k_z):
        z = rng.standard_normal(op.dim)
        u, _ = _solution_estimate(op, z, solver, rng, precond)
        total += float(u @ d_op.matvec(z))
    return total / k_z


def slq_logdet(op: SpdOperator, k_z: int, solver: Solver, rng: np.random.Generator,
               precond=None, policy: ReorthPolicy = FULL) -> float:
    """Stochastic Lanczos quadrature estimate of log|A|.

    Averages ||z||^2 e1' log(T^{(z)}) e1 over standard-normal probes, with the
    section depth either fixed or TSS-randomized. With a preconditioner the
    quadrature runs on M^{-1/2} A M^{-1/2} and the exact log|M| is added.
    """
    if k_z < 1:
        raise ValueError(f"need at least one probe, got k_z={k_z}")
    total = 0.0
    for _ in range(k_z):
        z = rng.standard_normal(op.dim)
        if isinstance(solver, TruncatedSolver):
            norm_sq = float(z @ z)
            trace = lanczos_run(op, z / np.sqrt(norm_sq), solver.m,
                                policy=policy, precond=precond)
            total += norm_sq * _scalar_quadrature(trace, solver.m, LOG)
        else:
            res = tss_logqf(op, z, solver.dist, rng, precond=precond, policy=policy)
            total += res.scaled_estimate
    estimate = total / k_z
    if precond is not None:
        estimate += logdet_m(precond)
    return estimate


def resolve_dist(spec: DistSpec, flavor: str, op: SpdOperator,
                 rng: np.random.Generator, precond=None,
                 lambda_min_floor: Optional[float] = None):
    """Materialize a DistSpec against an operator.

    Gamma-optimal recipes need a condition number of the (preconditioned)
    operator: 'pilot' brackets it from Ritz values, 'dense' takes the exact
    value. Returns (distribution, kappa or None).
    """
    if spec.kind != "gamma_optimal":
        return spec.make(flavor), None
    if spec.kappa_source == "dense":
        a = op.dense()
        if precond is not None:
            half = precond.dense_minv_sqrt()
            a = half @ a @ half
            a = 0.5 * (a + a.T)
        kappa = condition_number_dense(a)
    else:
        kappa = estimate_condition_number(op, rng, precond=precond,
                                          lambda_min_floor=lambda_min_floor)
    return spec.make(flavor, kappa), kappa
