from __future__ import annotations

import pytest

from fragcorridor.levy_scale import LevyModel, scale_table
from fragcorridor.measures import binary_uniform

# acceptance lines collected by test_acceptance, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def bu_measure():
    return binary_uniform(1.0)


@pytest.fixture(scope="session")
def growth_model(bu_measure):
    """v > rho: rho ~ 0.597 on (0.5, 16)."""
    return LevyModel(bu_measure, 1.0, 0.5, 16.0)


@pytest.fixture(scope="session")
def growth_table(growth_model):
    return scale_table(growth_model)


@pytest.fixture(scope="session")
def extinct_model(bu_measure):
    """rho ~ 1.194 > v on (0.5, 4)."""
    return LevyModel(bu_measure, 1.0, 0.5, 4.0)


@pytest.fixture(scope="session")
def extinct_table(extinct_model):
    return scale_table(extinct_model)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
