import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from orpco.data import Schema
from orpco.synthetic import MixtureProcess, generate_synthetic_discrete

settings.register_profile("orpco", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("orpco")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_schema():
    return Schema.from_dims(2, 1, 2)


@pytest.fixture(scope="session")
def mixture():
    return MixtureProcess()


@pytest.fixture(scope="session")
def synthetic_small(mixture):
    return generate_synthetic_discrete(mixture, 2000, seed=0)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import summary_lines

    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
