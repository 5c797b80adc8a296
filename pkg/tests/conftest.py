import numpy as np
import pytest

from zigmhmm import MixtureHmmParams


def random_params(rng, K, M, eps_range=(0.05, 0.4)):
    A = rng.dirichlet(np.ones(M), size=(K, M))
    return MixtureHmmParams(
        delta=rng.dirichlet(np.ones(K)),
        pi=rng.dirichlet(np.ones(M), size=K),
        A=A,
        epsilon=rng.uniform(*eps_range, size=M),
        shape=rng.uniform(0.5, 4.0, size=M),
        rate=rng.uniform(0.3, 3.0, size=M),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
