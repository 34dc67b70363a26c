import numpy as np
import pytest

from rflmpc.dynamics import VehicleParams


@pytest.fixture
def vehicle():
    return VehicleParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


def record_acceptance(line: str) -> None:
    """Print one acceptance line now and keep it for the terminal summary."""
    _ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
