import numpy as np
import pytest

from metastab import landscape as lsc
from metastab import potential as pot


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo runs (minutes)")


@pytest.fixture(scope="session")
def dw_spec():
    return pot.builtin_spec("double_well")


@pytest.fixture(scope="session")
def dw(dw_spec):
    return lsc.analyze(dw_spec)


@pytest.fixture(scope="session")
def tw2d():
    return lsc.analyze(pot.builtin_spec("triple_well_2d"))


@pytest.fixture(scope="session")
def tw1d():
    return lsc.analyze(pot.builtin_spec("triple_well_1d"))


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)
