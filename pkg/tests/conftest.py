import numpy as np
import pytest

from latentmarkov import BasicParams, simulate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def truth_basic():
    """Well-separated two-state model with three categories."""
    return BasicParams(
        np.array([0.6, 0.4]),
        np.array([[0.85, 0.15], [0.2, 0.8]]),
        np.array([[[0.7, 0.1], [0.2, 0.2], [0.1, 0.7]]]),
        (3,),
    )


@pytest.fixture
def basic_data():
    return simulate(truth_basic(), n=500, T=5, seed=7)


_ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
