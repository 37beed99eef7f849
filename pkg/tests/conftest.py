import numpy as np
import pytest

from plwk.problems import EllipticConfig, EllipticProblem, LinearBlockProblem, LinearConfig

ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def linear_problem():
    return LinearBlockProblem(LinearConfig())


@pytest.fixture(scope="session")
def elliptic_problem():
    return EllipticProblem(EllipticConfig())


@pytest.fixture(scope="session")
def elliptic_consistent():
    """Elliptic problem whose data come from the inversion grid itself, so the
    reference coefficient solves the discrete system exactly."""
    return EllipticProblem(EllipticConfig(data_refinement=1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
