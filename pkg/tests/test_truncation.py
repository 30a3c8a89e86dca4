import numpy as np
import pytest
from numpy.testing import assert_allclose

from stochkrylov.truncation import (DistSpec, TruncationDistribution, gamma_factor,
                                    gamma_optimal_value, make_exponential,
                                    make_gamma_optimal, make_geometric,
                                    minimize_weighted_sum, rho_solve, sample)


def test_exponential_singleton():
    dist = make_exponential(0.5, 7, 7)
    assert_allclose(dist.pmf, [1.0])


def test_exponential_two_terms():
    dist = make_exponential(0.5, 1, 2)
    w = np.array([np.exp(-0.5), np.exp(-1.0)])
    assert_allclose(dist.pmf, w / w.sum(), rtol=1e-12)
    assert_allclose(dist.pmf, [0.62246, 0.37754], atol=5e-6)


def test_exponential_flat_limit():
    dist = make_exponential(1e-12, 1, 4)
    assert_allclose(dist.pmf, [0.25] * 4, atol=1e-11)


def test_geometric_values():
    assert_allclose(make_geometric(1, 2).pmf, [2.0 / 3.0, 1.0 / 3.0], rtol=1e-14)
    assert_allclose(make_geometric(5, 5).pmf, [1.0])
    assert_allclose(make_geometric(1, 3).pmf, [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0],
                    rtol=1e-14)


def test_gamma_optimal_solve_kappa_four():
    dist = make_gamma_optimal("solve", 4.0, 1, 2)
    assert_allclose(rho_solve(4.0), 1.0 / 3.0, rtol=1e-14)
    assert_allclose(dist.pmf, [0.75, 0.25], rtol=1e-14)


def test_gamma_optimal_degenerate_kappa_one():
    # the support collapses to {i_min}: a point mass with all-positive pmf
    dist = make_gamma_optimal("solve", 1.0, 3, 9)
    assert dist.i_min == dist.i_max == 3
    assert_allclose(dist.pmf, [1.0])


def test_gamma_optimal_singleton_support():
    dist = make_gamma_optimal("solve", 123.0, 4, 4)
    assert_allclose(dist.pmf, [1.0])


def test_gamma_factor_point_mass():
    dist = TruncationDistribution(3, 3, np.array([1.0]))
    g = gamma_factor(dist, "solve", 4.0)
    assert_allclose(g.value, (1.0 / 3.0) ** 4, rtol=1e-14)


def test_gamma_factor_zero_convention():
    dist = TruncationDistribution(1, 1, np.array([1.0]))
    g = gamma_factor(dist, "solve", 1.0)
    assert g.value == 1.0


def test_gamma_factor_matches_closed_form():
    dist = make_gamma_optimal("solve", 4.0, 1, 2)
    g = gamma_factor(dist, "solve", 4.0)
    assert_allclose(g.value, 16.0 / 9.0, rtol=1e-12)
    assert_allclose(gamma_optimal_value("solve", 4.0, 1, 2), 16.0 / 9.0, rtol=1e-12)


def test_gamma_optimality_property(rng):
    for _ in range(20):
        kappa = float(rng.uniform(1.5, 1e3))
        i_min = int(rng.integers(1, 11))
        i_max = i_min + int(rng.integers(0, 31))
        for flavor in ("solve", "logqf"):
            opt = make_gamma_optimal(flavor, kappa, i_min, i_max)
            g_opt = gamma_factor(opt, flavor, kappa).value
            closed = gamma_optimal_value(flavor, kappa, i_min, i_max)
            assert_allclose(g_opt, closed, rtol=1e-10)
            for _ in range(20):
                w = rng.uniform(0.05, 1.0, size=i_max - i_min + 1)
                rand_dist = TruncationDistribution(i_min, i_max, w / w.sum())
                assert gamma_factor(rand_dist, flavor, kappa).value >= closed * (1 - 1e-10)


def test_gamma_optimal_monotone_tail():
    # smaller kappa concentrates the optimal distribution on earlier indices
    small = make_gamma_optimal("solve", 20.0, 1, 30)
    large = make_gamma_optimal("solve", 200.0, 1, 30)
    cdf_small = np.cumsum(small.pmf)
    cdf_large = np.cumsum(large.pmf)
    assert np.all(cdf_small >= cdf_large - 1e-12)


def test_gamma_optimal_stays_bounded_as_kappa_grows():
    # the optimal Gamma tends to the flat-limit value (support width)^2 from
    # below, so the variance bounds keep their kappa^2 / kappa log^2 kappa rates
    i_min, i_max = 3, 12
    width_sq = float((i_max - i_min + 1) ** 2)
    previous = 0.0
    for kappa in (1e2, 1e4, 1e8, 1e12):
        for flavor in ("solve", "logqf"):
            val = gamma_optimal_value(flavor, kappa, i_min, i_max)
            assert val <= width_sq * (1 + 1e-12)
        val_solve = gamma_optimal_value("solve", kappa, i_min, i_max)
        assert val_solve >= previous
        previous = val_solve


def test_minimize_weighted_sum_example():
    pmf, value = minimize_weighted_sum(4.0, 1, 2)
    assert_allclose(pmf, [1.0 / 3.0, 2.0 / 3.0], rtol=1e-14)
    assert_allclose(value, 36.0, rtol=1e-14)
    # check against direct evaluation of the objective at the optimizer
    assert_allclose(4.0 / pmf[0] + 16.0 / pmf[1], 36.0, rtol=1e-14)


def test_minimize_weighted_sum_symmetric_limit():
    pmf, value = minimize_weighted_sum(1.0, 1, 4)
    assert_allclose(pmf, [0.25] * 4)
    assert value == 16.0


def test_minimize_weighted_sum_singleton():
    pmf, value = minimize_weighted_sum(3.0, 5, 5)
    assert_allclose(pmf, [1.0])
    assert_allclose(value, 3.0**5, rtol=1e-14)


def test_sample_point_mass(rng):
    dist = TruncationDistribution(5, 5, np.array([1.0]))
    assert all(sample(dist, rng) == 5 for _ in range(20))


def test_sample_inverse_cdf_semantics():
    dist = TruncationDistribution(1, 2, np.array([0.5, 0.5]))

    class Stub:
        def __init__(self, u):
            self.u = u

        def random(self):
            return self.u

    assert sample(dist, Stub(0.3)) == 1
    assert sample(dist, Stub(0.7)) == 2


def test_sample_empirical_frequencies(rng):
    dist = TruncationDistribution(1, 2, np.array([0.75, 0.25]))
    draws = 1_000_000
    cdf = np.cumsum(dist.pmf)
    qs = 1 + np.searchsorted(cdf, rng.random(draws), side="right")
    freq = np.mean(qs == 1)
    tol = 3.0 * np.sqrt(0.75 * 0.25 / draws)
    assert abs(freq - 0.75) <= tol


def test_pmf_validation():
    with pytest.raises(ValueError):
        TruncationDistribution(2, 1, np.array([1.0]))
    with pytest.raises(ValueError):
        TruncationDistribution(1, 2, np.array([0.9, 0.2]))
    with pytest.raises(ValueError, match="underflow"):
        TruncationDistribution(1, 2, np.array([1.0, 0.0]))
    with pytest.raises(ValueError, match="underflow"):
        make_exponential(0.5, 1, 2000)


def test_expected_q_and_survival():
    dist = make_exponential(0.5, 5, 10)
    j = dist.support
    assert_allclose(dist.expected_q(), float(j @ dist.pmf), rtol=1e-14)
    surv = dist.survival()
    assert_allclose(surv[0], 1.0, rtol=1e-12)
    assert np.all(np.diff(surv) < 0)


def test_dist_spec_roundtrip_kinds():
    spec = DistSpec("exponential", 5, 10, c=0.5)
    dist = spec.make()
    assert dist.i_min == 5 and dist.i_max == 10
    spec = DistSpec("gamma_optimal", 5, 10)
    with pytest.raises(ValueError, match="condition number"):
        spec.make()
    dist = spec.make("solve", kappa=25.0)
    assert dist.prob(5) > dist.prob(10)
    with pytest.raises(ValueError):
        DistSpec("zipf", 1, 2)
