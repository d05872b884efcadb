import numpy as np
import pytest

from bpcc.model import WorkerProfile


def random_roster(rng, n=10, p=1):
    """Heterogeneous roster in the style of the simulation studies:
    mu uniform in [1, 50], alpha = 1/mu."""
    mus = rng.uniform(1.0, 50.0, n)
    return [WorkerProfile(float(mu), float(1.0 / mu), p) for mu in mus]


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def het_roster(rng):
    return random_roster(rng)
