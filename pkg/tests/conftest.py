import numpy as np
import pytest

from oslo_lqr.core import BoundParams, make_instance

GOLDEN_P = (1 + np.sqrt(5)) / 2


@pytest.fixture
def golden():
    """A = B = Q = R = W = 1."""
    return make_instance(1.0, 1.0, bounds=BoundParams(1.0, 1.0, 1.0, np.sqrt(2.0), GOLDEN_P))


@pytest.fixture
def decoupled():
    """A = 0, B = Q = R = W = 1."""
    return make_instance(0.0, 1.0, bounds=BoundParams(1.0, 1.0, 1.0, 1.0, 1.0))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte-Carlo or benchmark test")


ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
