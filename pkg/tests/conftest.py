import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=30,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

warnings.filterwarnings("ignore", message="Best performing initialization")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_hmm_params(rng, k=None, n_max_k=3):
    """Interior random parameters for small oracle checks."""
    from hmmselect import HmmParams

    if k is None:
        k = int(rng.integers(1, n_max_k + 1))
    trans = rng.dirichlet(np.full(k, 2.0), size=k)
    trans = trans / trans.sum(axis=1, keepdims=True)
    means = rng.normal(0.0, 2.0, size=k)
    variances = rng.uniform(0.1, 2.0, size=k)
    return HmmParams(k=k, trans=trans, means=means, variances=variances)
