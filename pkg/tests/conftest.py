import numpy as np
import pytest

from epsoracle import Discrete, GaussianMixture, build_linear_schedule
from epsoracle.config import GOLDEN, load_config

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def sched100():
    return build_linear_schedule(100, 1e-4, 0.02)


@pytest.fixture(scope="session")
def golden():
    return {name: load_config(name).distribution for name in GOLDEN}


@pytest.fixture
def gmm3():
    return GaussianMixture([0.3, 0.5, 0.2], [[-2.0], [0.5], [2.5]], [[[0.25]], [[0.36]], [[0.16]]])


@pytest.fixture
def gmm2d():
    return GaussianMixture(
        [0.4, 0.6],
        [[-1.0, 0.5], [1.5, -0.5]],
        [[[0.5, 0.2], [0.2, 0.3]], [[0.3, -0.1], [-0.1, 0.6]]],
    )


@pytest.fixture
def twopoint():
    return Discrete([[-1.0], [1.0]], [0.5, 0.5])


@pytest.fixture
def std_normal():
    return GaussianMixture([1.0], [[0.0]], [[[1.0]]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
