from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nvcpt.dynamics import DrivenSystem
from nvcpt.spin_model import HamiltonianParams, MagneticField, diagonalize

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def params() -> HamiltonianParams:
    return HamiltonianParams()


@pytest.fixture(scope="session")
def eig88(params):
    return diagonalize(params, MagneticField(30.0, 88.0, 0.0))


@pytest.fixture(scope="session")
def eig0(params):
    return diagonalize(params, MagneticField(30.0, 0.0, 0.0))


@pytest.fixture(scope="session")
def system88(eig88) -> DrivenSystem:
    return DrivenSystem(eig88)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines, filled by test_acceptance and printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
