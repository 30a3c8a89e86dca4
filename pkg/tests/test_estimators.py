import numpy as np
import pytest
from numpy.testing import assert_allclose

from stochkrylov.estimators import (LOG, TruncatedSolver, TssSolver,
                                    enumerate_tss_scalar, enumerate_tss_solve,
                                    hutchinson_trace_derivative, quad_form_estimate,
                                    quad_form_grad_estimate, resolve_dist, rr_solve,
                                    slq_logdet, ss_solve, tss_exact_moments,
                                    tss_invqf, tss_logqf, tss_solve, variance_bound)
from stochkrylov.kernels import KernelSpec, gram_derivative, gram_matrix
from stochkrylov.krylov import cg_run, lanczos_run
from stochkrylov.operators import NotSpdError, SpdOperator, condition_number_dense, \
    dense_cholesky_oracle
from stochkrylov.precond import build_pivoted_cholesky
from stochkrylov.truncation import (DistSpec, TruncationDistribution, gamma_factor,
                                    make_exponential, make_gamma_optimal)

from conftest import line_dataset, random_kernel_system


class StubRng:
    """Deterministic stand-in feeding chosen uniforms to the sampler."""

    def __init__(self, *us):
        self.us = list(us)

    def random(self):
        return self.us.pop(0)


def uniform_dist(i_min, i_max):
    k = i_max - i_min + 1
    return TruncationDistribution(i_min, i_max, np.full(k, 1.0 / k))


def test_tss_solve_identity_point_mass(rng):
    op = SpdOperator.from_dense(np.eye(4))
    y = rng.standard_normal(4)
    dist = TruncationDistribution(1, 1, np.array([1.0]))
    res = tss_solve(op, y, dist, rng)
    assert_allclose(res.estimate, y, rtol=1e-14)
    assert res.sampled_q == 1
    assert res.expected_target == "x_1"


def test_tss_solve_enumerated_mean_is_deterministic_iterate():
    op = SpdOperator.from_dense(np.diag([1.0, 2.0]))
    y = np.array([1.0, 1.0])
    enum = enumerate_tss_solve(op, y, uniform_dist(1, 2))
    assert_allclose(enum.mean, [1.0, 0.5], rtol=1e-12)


def test_tss_solve_monte_carlo_mean(rng):
    spec = KernelSpec("rbf", 1.0, 1.0, 0.1)
    op = gram_matrix(spec, line_dataset([0.0, 1.0, 2.0]))
    y = np.array([1.0, 0.0, 0.0])
    dist = make_exponential(0.5, 1, 3)
    x3 = cg_run(op, y, 3).iterate(3)
    draws = np.array([tss_solve(op, y, dist, rng).estimate for _ in range(4000)])
    mean = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(mean - x3) <= 3.5 * se + 1e-12)


def test_tss_solve_breakdown_before_imin(rng):
    op = SpdOperator.from_dense(np.eye(5))
    y = rng.standard_normal(5)
    dist = uniform_dist(2, 4)
    res = tss_solve(op, y, dist, rng)
    assert res.converged
    assert res.sampled_q == 1  # the breakdown step
    assert_allclose(res.estimate, y, rtol=1e-14)


def test_ss_solve_identity_scaling(rng):
    op = SpdOperator.from_dense(np.eye(3))
    y = np.array([1.0, -2.0, 0.5])
    dist = uniform_dist(1, 3)
    res = ss_solve(op, y, dist, StubRng(0.0))  # Q = 1
    assert_allclose(res, y / dist.prob(1), rtol=1e-14)


def test_ss_solve_requires_full_support():
    op = SpdOperator.from_dense(np.eye(3))
    with pytest.raises(ValueError, match="support"):
        ss_solve(op, np.ones(3), uniform_dist(1, 2), StubRng(0.0))


def test_ss_solve_enumerated_mean():
    op = SpdOperator.from_dense(np.diag([1.0, 2.0]))
    y = np.array([1.0, 1.0])
    dist = uniform_dist(1, 2)
    outcomes = [ss_solve(op, y, dist, StubRng(0.3)),
                ss_solve(op, y, dist, StubRng(0.8))]
    mean = 0.5 * (outcomes[0] + outcomes[1])
    assert_allclose(mean, [1.0, 0.5], rtol=1e-12)


def test_rr_solve_point_mass_full_depth(rng):
    op = SpdOperator.from_dense(np.diag([1.0, 2.0]))
    y = np.array([1.0, 1.0])
    dist = TruncationDistribution(2, 2, np.array([1.0]))
    assert_allclose(rr_solve(op, y, dist, rng), [1.0, 0.5], rtol=1e-12)


def test_rr_variance_not_above_ss(rng):
    op, _, _ = random_kernel_system(rng, n=12, mu=0.5)
    y = rng.standard_normal(12)
    dist = uniform_dist(1, 12)
    trace = cg_run(op, y, 12)
    deltas = np.array([trace.increment(j) for j in range(1, 13)])
    surv = dist.survival()
    ss_vals = deltas / dist.pmf[:, None]
    rr_vals = np.cumsum(deltas / surv[:, None], axis=0)
    mean_ss = dist.pmf @ ss_vals
    mean_rr = dist.pmf @ rr_vals
    var_ss = float(dist.pmf @ ((ss_vals - mean_ss) ** 2).sum(axis=1))
    var_rr = float(dist.pmf @ ((rr_vals - mean_rr) ** 2).sum(axis=1))
    assert var_rr <= var_ss * (1 + 1e-12)


def test_rr_matches_manual_enumeration():
    op = SpdOperator.from_dense(np.diag([1.0, 2.0]))
    y = np.array([1.0, 1.0])
    dist = uniform_dist(1, 2)
    trace = cg_run(op, y, 2)
    surv = dist.survival()
    manual_q2 = trace.increment(1) / surv[0] + trace.increment(2) / surv[1]
    assert_allclose(rr_solve(op, y, dist, StubRng(0.9)), manual_q2, rtol=1e-12)


def test_tss_logqf_identity_is_zero(rng):
    op = SpdOperator.from_dense(np.eye(6))
    z = rng.standard_normal(6)
    res = tss_logqf(op, z, uniform_dist(1, 3), rng)
    assert abs(res.estimate) <= 1e-12


def test_tss_logqf_two_by_two_closed_form(rng):
    op = SpdOperator.from_dense(np.diag([1.0, 3.0]))
    z = np.array([1.0, 1.0])
    dist = TruncationDistribution(2, 2, np.array([1.0]))
    res = tss_logqf(op, z, dist, rng)
    assert_allclose(res.estimate, 0.5 * np.log(3.0), rtol=1e-12)
    assert res.probe_norm_sq == 2.0


def test_tss_logqf_enumerated_mean_is_s_imax(rng):
    op, _, _ = random_kernel_system(rng, n=64, mu=0.5)
    z = rng.standard_normal(64)
    dist = make_exponential(0.5, 5, 10)
    enum = enumerate_tss_scalar(op, z, dist, fn=LOG)
    trace = lanczos_run(op, z / np.linalg.norm(z), 10)
    vals, vecs = np.linalg.eigh(trace.tridiagonal(10))
    s10 = float((vecs[0, :] ** 2) @ np.log(vals))
    assert_allclose(float(enum.mean), s10, rtol=1e-10, atol=1e-12)


def test_tss_logqf_rejects_indefinite(rng):
    op = SpdOperator.from_dense(np.diag([1.0, -1.0]))
    z = np.array([1.0, 1.0])
    dist = TruncationDistribution(2, 2, np.array([1.0]))
    with pytest.raises(NotSpdError, match="Ritz"):
        tss_logqf(op, z, dist, rng)


def test_tss_invqf_matches_cg_quad_form(rng):
    op, _, _ = random_kernel_system(rng, n=32, mu=0.5)
    y = rng.standard_normal(32)
    dist = TruncationDistribution(6, 6, np.array([1.0]))
    res = tss_invqf(op, y, dist, rng)
    x6 = cg_run(op, y, 6).iterate(6)
    assert_allclose(res.scaled_estimate, float(y @ x6), rtol=1e-9)


def test_tss_exact_moments_examples():
    dist = uniform_dist(1, 2)
    mean, var = tss_exact_moments(np.array([1.0, 1.0]), dist)
    assert_allclose(mean, 2.0)
    assert_allclose(var, 0.0, atol=1e-12)
    mean, var = tss_exact_moments(np.array([1.0, 0.0]), dist)
    assert_allclose(mean, 1.0)
    assert_allclose(var, 1.0, rtol=1e-12)
    point = TruncationDistribution(2, 2, np.array([1.0]))
    _, var = tss_exact_moments(np.array([1.0, 0.3]), point)
    assert_allclose(var, 0.0, atol=1e-12)


def test_tss_exact_moments_missing_increments():
    with pytest.raises(ValueError, match="increments"):
        tss_exact_moments(np.array([1.0]), uniform_dist(1, 2))


def test_enumerated_variance_matches_formula(rng):
    op, _, _ = random_kernel_system(rng, n=32, mu=0.3)
    y = rng.standard_normal(32)
    dist = make_exponential(0.5, 3, 8)
    enum = enumerate_tss_solve(op, y, dist)
    mean, var = tss_exact_moments(enum.deltas, dist)
    assert_allclose(enum.mean, mean, rtol=1e-12)
    assert_allclose(enum.variance, var, rtol=1e-10, atol=1e-14)


def test_monte_carlo_variance_close_to_exact(rng):
    op, _, _ = random_kernel_system(rng, n=32, mu=0.3)
    z = rng.standard_normal(32)
    dist = make_exponential(0.5, 3, 8)
    enum = enumerate_tss_scalar(op, z, dist, fn=LOG)
    draws = enum.sample_values(rng, 1_000_000)
    assert abs(draws.var(ddof=1) - enum.variance) <= 0.05 * enum.variance


def test_unbiased_at_full_support(rng):
    op, _, _ = random_kernel_system(rng, n=24, mu=1.0)
    y = rng.standard_normal(24)
    enum = enumerate_tss_solve(op, y, uniform_dist(1, 24))
    exact = dense_cholesky_oracle(op.dense(), y).solution
    assert np.linalg.norm(enum.mean - exact) <= 1e-8 * np.linalg.norm(exact)


def test_variance_bound_values():
    g1 = gamma_factor(TruncationDistribution(1, 1, np.array([1.0])), "solve", 1.0)
    assert_allclose(variance_bound("solve", 1.0, g1, x_norm_sq=1.0).bound, 16.0)
    dist = make_gamma_optimal("solve", 4.0, 1, 2)
    g = gamma_factor(dist, "solve", 4.0)
    b = variance_bound("solve", 4.0, g, x_norm_sq=1.0)
    assert_allclose(b.bound, 4096.0 / 9.0, rtol=1e-12)
    b_opt = variance_bound("solve_optimal", 4.0, g, x_norm_sq=1.0)
    assert_allclose(b_opt.bound, b.bound, rtol=1e-12)


def test_variance_bound_optimal_flavors_match_generic_at_optimum():
    # the simplified optimal-prefactor forms equal the generic bound
    # evaluated at the optimal Gamma, for both flavors
    for kappa in (3.0, 40.0, 900.0):
        for i_min, i_max in ((1, 6), (4, 12)):
            d_s = make_gamma_optimal("solve", kappa, i_min, i_max)
            g_s = gamma_factor(d_s, "solve", kappa)
            assert_allclose(
                variance_bound("solve_optimal", kappa, g_s, x_norm_sq=2.5).bound,
                variance_bound("solve", kappa, g_s, x_norm_sq=2.5).bound, rtol=1e-10)
            d_l = make_gamma_optimal("logqf", kappa, i_min, i_max)
            g_l = gamma_factor(d_l, "logqf", kappa)
            assert_allclose(
                variance_bound("logqf_optimal", kappa, g_l).bound,
                variance_bound("logqf", kappa, g_l).bound, rtol=1e-10)


def test_variance_bound_dominates_enumerated(rng):
    for _ in range(20):
        n = int(rng.integers(16, 48))
        op, _, _ = random_kernel_system(rng, n=n, mu=float(rng.uniform(0.3, 1.0)))
        y = rng.standard_normal(n)
        i_min = int(rng.integers(1, 5))
        i_max = i_min + int(rng.integers(1, 6))
        dist = make_exponential(0.5, i_min, i_max)
        kappa = condition_number_dense(op.dense())
        exact = dense_cholesky_oracle(op.dense(), y)
        enum = enumerate_tss_solve(op, y, dist)
        g = gamma_factor(dist, "solve", kappa)
        bound = variance_bound("solve", kappa, g,
                               x_norm_sq=float(exact.solution @ exact.solution))
        assert enum.variance <= bound.bound
        z = rng.standard_normal(n)
        enum_log = enumerate_tss_scalar(op, z, dist, fn=LOG)
        g_log = gamma_factor(dist, "logqf", kappa)
        bound_log = variance_bound("logqf", kappa, g_log)
        assert enum_log.variance <= bound_log.bound


def test_preconditioning_reduces_enumerated_variance(rng):
    spec = KernelSpec("rbf", 1.0, 2.0, 0.01)
    from stochkrylov.harness.datasets import generate_cube_dataset
    side = 16.0 / (4096.0 / 128.0) ** (1.0 / 3.0)
    data = generate_cube_dataset(128, 3, side, rng)
    op = gram_matrix(spec, data)
    y = rng.uniform(-0.5, 0.5, size=128)
    dist = make_exponential(0.5, 5, 15)
    p = build_pivoted_cholesky(op, 32, spec.f**2 * spec.mu)
    var_np = enumerate_tss_solve(op, y, dist).variance
    var_pc = enumerate_tss_solve(op, y, dist, precond=p).variance
    assert var_pc <= var_np


def test_slq_logdet_identity(rng):
    op = SpdOperator.from_dense(np.eye(8))
    assert abs(slq_logdet(op, 3, TruncatedSolver(2), rng)) <= 1e-12


def test_slq_logdet_small_dense_bracket(rng):
    op = SpdOperator.from_dense(np.diag([2.0, 8.0]))
    k_z = 4000
    vals = [slq_logdet(op, 1, TruncatedSolver(2), rng) for _ in range(k_z)]
    vals = np.array(vals)
    se = vals.std(ddof=1) / np.sqrt(k_z)
    assert abs(vals.mean() - np.log(16.0)) <= 3.5 * se


def test_slq_logdet_preconditioned_split(rng):
    op, spec, _ = random_kernel_system(rng, n=96, mu=0.3)
    p = build_pivoted_cholesky(op, 48, spec.f**2 * spec.mu)
    truth = dense_cholesky_oracle(op.dense(), np.zeros(96)).logdet
    est = slq_logdet(op, 30, TruncatedSolver(40), rng, precond=p)
    assert abs(est - truth) <= 0.05 * abs(truth)


def test_quad_form_identity(rng):
    op = SpdOperator.from_dense(np.eye(5))
    y = rng.standard_normal(5)
    assert_allclose(quad_form_estimate(op, y, TruncatedSolver(1), rng),
                    float(y @ y), rtol=1e-12)


def test_quad_form_finite_termination():
    op = SpdOperator.from_dense(np.array([[2.0, 1.0], [1.0, 2.0]]))
    y = np.array([1.0, 0.0])
    val = quad_form_estimate(op, y, TruncatedSolver(2))
    assert_allclose(val, 2.0 / 3.0, rtol=1e-12)


def test_quad_form_truncation_underestimates(rng):
    spec = KernelSpec("rbf", 1.0, 2.0, 0.01)
    from stochkrylov.harness.datasets import generate_cube_dataset
    side = 16.0 / (4096.0 / 128.0) ** (1.0 / 3.0)
    data = generate_cube_dataset(128, 3, side, rng)
    op = gram_matrix(spec, data)
    y = rng.uniform(-0.5, 0.5, size=128)
    truth = dense_cholesky_oracle(op.dense(), y).quad_form
    assert quad_form_estimate(op, y, TruncatedSolver(5), rng) < truth


def test_quad_form_grad_zero_derivative(rng):
    op = SpdOperator.from_dense(np.eye(4))
    d0 = SpdOperator.from_dense(np.zeros((4, 4)))
    y = rng.standard_normal(4)
    dist = TruncationDistribution(1, 1, np.array([1.0]))
    assert quad_form_grad_estimate(op, d0, y, TssSolver(dist), rng) == 0.0


def test_quad_form_grad_identity_point_mass(rng):
    op = SpdOperator.from_dense(np.eye(4))
    d1 = SpdOperator.from_dense(np.eye(4))
    y = rng.standard_normal(4)
    dist = TruncationDistribution(1, 1, np.array([1.0]))
    assert_allclose(quad_form_grad_estimate(op, d1, y, TssSolver(dist), rng),
                    float(y @ y), rtol=1e-12)


def test_quad_form_grad_expectation_factorizes(rng):
    op, spec, data = random_kernel_system(rng, n=24, mu=0.5)
    d_op = gram_derivative(spec, data, "l")
    y = rng.standard_normal(24)
    dist = make_exponential(0.5, 2, 6)
    enum = enumerate_tss_solve(op, y, dist)
    x_target = enum.mean
    expected = float(x_target @ d_op.matvec(x_target))
    # enumeration over independent pairs collapses to the product of means
    pair_mean = 0.0
    for pi, ei in zip(dist.pmf, enum.estimates):
        for pj, ej in zip(dist.pmf, enum.estimates):
            pair_mean += pi * pj * float(ei @ d_op.matvec(ej))
    assert_allclose(pair_mean, expected, rtol=1e-10)
    draws = np.array([quad_form_grad_estimate(op, d_op, y, TssSolver(dist), rng)
                      for _ in range(3000)])
    se = draws.std(ddof=1) / np.sqrt(len(draws))
    assert abs(draws.mean() - expected) <= 3.5 * se


def test_hutchinson_zero_derivative(rng):
    op = SpdOperator.from_dense(np.eye(4))
    d0 = SpdOperator.from_dense(np.zeros((4, 4)))
    assert hutchinson_trace_derivative(op, d0, 5, TruncatedSolver(1), rng) == 0.0


def test_hutchinson_identity_chi_square(rng):
    n, k_z = 16, 4000
    op = SpdOperator.from_dense(np.eye(n))
    d1 = SpdOperator.from_dense(np.eye(n))
    est = hutchinson_trace_derivative(op, d1, k_z, TruncatedSolver(1), rng)
    assert abs(est - n) <= 3.0 * np.sqrt(2.0 * n / k_z)


def test_hutchinson_trace_of_inverse(rng):
    op = SpdOperator.from_dense(np.diag([2.0, 8.0]))
    d1 = SpdOperator.from_dense(np.eye(2))
    k_z = 10_000
    est = hutchinson_trace_derivative(op, d1, k_z, TruncatedSolver(2), rng)
    # Var(z' A^{-1} z) = 2 ||A^{-1}||_F^2
    se = np.sqrt(2.0 * (0.25**2 + 0.125**2) / k_z)
    assert abs(est - 0.625) <= 3.5 * se


def test_resolve_dist_kinds(rng):
    op, spec, _ = random_kernel_system(rng, n=24, mu=0.5)
    dist, kappa = resolve_dist(DistSpec("exponential", 2, 5), "solve", op, rng)
    assert kappa is None
    assert dist.i_min == 2
    dist, kappa = resolve_dist(DistSpec("gamma_optimal", 2, 5, kappa_source="dense"),
                               "solve", op, rng)
    assert_allclose(kappa, condition_number_dense(op.dense()), rtol=1e-12)
    dist, kappa = resolve_dist(DistSpec("gamma_optimal", 2, 5, kappa_source="pilot"),
                               "solve", op, rng,
                               lambda_min_floor=spec.f**2 * spec.mu)
    assert kappa >= 1.0
