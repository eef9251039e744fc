import numpy as np
import pytest

from .fomsim import build_synthetic_fom
from .models import FomConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_fom_config():
    return FomConfig(m=2, n_f=8, nu=0.1, steps=200, frequencies_hz=[1.0, 2.0], dt=1e-3)


@pytest.fixture
def small_fom(small_fom_config):
    return build_synthetic_fom(small_fom_config)


@pytest.fixture(scope="session")
def agard_fom():
    return build_synthetic_fom(FomConfig())
