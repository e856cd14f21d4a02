import numpy as np
import pytest

from fracgreen.drift import DriftField
from fracgreen.geometry import Ball
from fracgreen.kernels import StableParams
from fracgreen.perturb import majorant_report


@pytest.fixture(scope="session")
def params():
    return StableParams(2, 1.5)


@pytest.fixture(scope="session")
def unit_ball():
    return Ball((0.0, 0.0), 1.0)


@pytest.fixture(scope="session")
def ou():
    return DriftField.ornstein_uhlenbeck(0.5, 2)


@pytest.fixture(scope="session")
def ou_small(params, ou):
    """OU drift on the smallest ball of the halving sequence that is contractive."""
    ball = Ball((0.0, 0.0), 0.125)
    return ball, majorant_report(params, ball, ou)


def disc_points(n, rng, radius=1.0, fill=0.95):
    z = rng.standard_normal((n, 2))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return radius * fill * np.sqrt(rng.random(n))[:, None] * z


ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the lines are repeated in the terminal summary."""

    def record(number, name, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d} {name}: {detail}".rstrip(": ")
        ACCEPTANCE.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
