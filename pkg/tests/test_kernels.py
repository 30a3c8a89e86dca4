import numpy as np
import pytest
from numpy.testing import assert_allclose

from stochkrylov.kernels import (Dataset, KernelSpec, gram_derivative, gram_matrix,
                                 kernel_eval)
from stochkrylov.operators import NotSpdError, dense_cholesky_oracle

from conftest import line_dataset


def test_kernel_eval_unit_at_zero_distance():
    for family in ("rbf", "matern32"):
        spec = KernelSpec(family, 1.0, 2.3, 0.0)
        assert kernel_eval(spec, np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 1.0


def test_kernel_eval_rbf_value():
    spec = KernelSpec("rbf", 1.0, 1.0, 0.0)
    x = np.array([1.0, 0.0])
    y = np.array([0.0, 1.0])  # r = sqrt(2)
    assert_allclose(kernel_eval(spec, x, y), np.exp(-1.0), rtol=1e-14)


def test_kernel_eval_matern_value():
    spec = KernelSpec("matern32", 1.0, 2.0, 0.0)
    r = 1.7
    expected = (1 + np.sqrt(3) * r / 2.0) * np.exp(-np.sqrt(3) * r / 2.0)
    assert_allclose(kernel_eval(spec, np.array([0.0]), np.array([r])), expected,
                    rtol=1e-14)


def test_gram_single_point():
    spec = KernelSpec("rbf", 1.0, 1.0, 0.01)
    op = gram_matrix(spec, line_dataset([3.0]))
    assert_allclose(op.dense(), [[1.01]])


def test_gram_duplicate_points_singular_without_noise():
    spec = KernelSpec("rbf", 1.0, 1.0, 0.0)
    op = gram_matrix(spec, line_dataset([2.0, 2.0]))
    assert_allclose(op.dense(), np.ones((2, 2)))
    with pytest.raises(NotSpdError):
        dense_cholesky_oracle(op.dense(), np.zeros(2))
    regularized = gram_matrix(spec.replace(mu=0.1), line_dataset([2.0, 2.0]))
    dense_cholesky_oracle(regularized.dense(), np.zeros(2))  # now SPD


def test_gram_collinear_points_scaled():
    spec = KernelSpec("rbf", 2.0, 1.0, 0.5)
    op = gram_matrix(spec, line_dataset([0.0, 1.0, 2.0]))
    k = np.array([[1.0, np.exp(-0.5), np.exp(-2.0)],
                  [np.exp(-0.5), 1.0, np.exp(-0.5)],
                  [np.exp(-2.0), np.exp(-0.5), 1.0]])
    assert_allclose(op.dense(), 4.0 * (k + 0.5 * np.eye(3)), rtol=1e-14)


def test_gram_exactly_symmetric(rng):
    from conftest import random_kernel_system
    op, _, _ = random_kernel_system(rng, n=50)
    a = op.dense()
    assert np.array_equal(a, a.T)


def test_gram_lambda_min_floor(rng):
    from conftest import random_kernel_system
    for _ in range(5):
        op, spec, _ = random_kernel_system(rng, n=40)
        lam_min = np.linalg.eigvalsh(op.dense())[0]
        assert lam_min >= spec.f**2 * spec.mu * (1 - 1e-12)


def test_derivative_mu_is_scaled_identity():
    spec = KernelSpec("rbf", 1.0, 1.5, 0.3)
    d = gram_derivative(spec, line_dataset([0.0, 2.0]), "mu")
    assert_allclose(d.dense(), np.eye(2))


def test_derivative_f_scaling_rule():
    spec = KernelSpec("rbf", 1.0, 1.0, 0.0)
    data = line_dataset([0.0, 1.0, 3.0])
    k = gram_matrix(spec, data).dense()
    d = gram_derivative(spec, data, "f").dense()
    assert_allclose(d, 2.0 * k, rtol=1e-14)


def test_derivative_l_entry_value():
    spec = KernelSpec("rbf", 1.0, 1.0, 0.0)
    d = gram_derivative(spec, line_dataset([0.0, 1.0]), "l").dense()
    assert_allclose(d[0, 1], np.exp(-0.5), rtol=1e-14)


def test_derivative_unknown_theta():
    spec = KernelSpec("rbf", 1.0, 1.0, 0.0)
    with pytest.raises(ValueError, match="hyperparameter"):
        gram_derivative(spec, line_dataset([0.0]), "sigma")


@pytest.mark.parametrize("family", ["rbf", "matern32"])
@pytest.mark.parametrize("theta", ["f", "l", "mu"])
def test_derivative_matches_finite_differences(rng, family, theta):
    from conftest import random_kernel_system
    op, spec, data = random_kernel_system(rng, n=16, family=family)
    base = getattr(spec, theta)
    h = 1e-6 * base
    k_plus = gram_matrix(spec.replace(**{theta: base + h}), data).dense()
    k_minus = gram_matrix(spec.replace(**{theta: base - h}), data).dense()
    fd = (k_plus - k_minus) / (2 * h)
    analytic = gram_derivative(spec, data, theta).dense()
    scale = max(np.abs(analytic).max(), 1e-12)
    assert np.abs(analytic - fd).max() / scale <= 1e-5


def test_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec("rbf", -1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        KernelSpec("rbf", 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        KernelSpec("rbf", 1.0, 1.0, -0.1)
    with pytest.raises(ValueError):
        KernelSpec("cubic", 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        Dataset(np.array([[np.inf, 0.0]]))
