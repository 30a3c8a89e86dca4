import numpy as np
import pytest

from stochkrylov.harness.datasets import generate_cube_dataset
from stochkrylov.kernels import Dataset, KernelSpec, gram_matrix


def random_kernel_system(rng, n=64, d=3, family="rbf", side=4.0,
                         f=None, l=None, mu=None):
    """A random regularized kernel operator plus its spec and data."""
    spec = KernelSpec(family,
                      f if f is not None else float(rng.uniform(0.5, 2.0)),
                      l if l is not None else float(rng.uniform(0.5, 3.0)),
                      mu if mu is not None else float(rng.uniform(0.1, 1.0)))
    data = generate_cube_dataset(n, d, side, rng)
    return gram_matrix(spec, data), spec, data


def line_dataset(points):
    return Dataset(np.asarray(points, dtype=float).reshape(-1, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
