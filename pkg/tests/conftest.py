import numpy as np
import pytest

import blockperm as bp


def random_design(rng, b, k, family="normal"):
    if family == "normal":
        raw = rng.standard_normal((b, k))
    elif family == "exponential_squared":
        raw = rng.standard_exponential((b, k)) ** 2
    else:
        raise ValueError(family)
    return bp.make_design(raw)


def random_interior_point(sorted_design, rng, shrink=None):
    """Shrunk convex combination of random vertices; strictly interior."""
    k = sorted_design.k
    n_mix = int(rng.integers(1, 4))
    weights = rng.dirichlet(np.ones(n_mix))
    x = np.zeros(k - 1)
    for w in weights:
        perm = rng.permutation(k)
        x += w * sorted_design.col_means[perm][: k - 1]
    if shrink is None:
        shrink = float(rng.uniform(0.05, 0.95))
    return shrink * x


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)
