import numpy as np
import pytest

from qopl import DgpConfig, generate_iv_dataset


@pytest.fixture(scope="session")
def iv_small():
    return generate_iv_dataset(DgpConfig(n=300, alpha=0.2, seed=11))


@pytest.fixture(scope="session")
def iv_unconfounded():
    return generate_iv_dataset(DgpConfig(n=5000, alpha=0.2, p_structured=0.0, seed=1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
