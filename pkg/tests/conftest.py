import numpy as np
import pytest

from dpmix.model import gaussian_create, mixture_create


@pytest.fixture
def std_normal():
    return gaussian_create([0.0], [[1.0]])


def random_mixture_1d(rng, k, mean_bound=5.0, var_range=(0.5, 2.0)):
    w = rng.dirichlet(np.ones(k))
    comps = [gaussian_create([rng.uniform(-mean_bound, mean_bound)],
                             [[rng.uniform(*var_range)]]) for _ in range(k)]
    return mixture_create(w, comps)
