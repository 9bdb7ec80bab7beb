import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tsprl.sim.core import GREEN, RED, Simulation
from tsprl.sim.demand import DemandConfig

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

NO_DEMAND = DemandConfig(0.0, 0.0, 0.0, 0.0, buses=False)
ALL_GREEN = np.full(10, GREEN, dtype=np.int8)
ALL_RED = np.full(10, RED, dtype=np.int8)


@pytest.fixture
def empty_sim():
    return Simulation(NO_DEMAND, seed=0)


# One PASS/FAIL line per acceptance criterion, shown after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
