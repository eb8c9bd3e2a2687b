from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mixedplap.energy import OperatorParams
from mixedplap.grid import interval_grid
from mixedplap.solver import SingularProblem, make_source, solve_singular

settings.register_profile(
    "repo",
    deadline=None,
    derandomize=True,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def grid101():
    return interval_grid(0.0, 1.0, 101)


@pytest.fixture(scope="session")
def solved_default(grid101):
    """delta=0.5, p=2, s=0.5, f=1 on (0, 1) with 101 nodes."""
    prob = SingularProblem(0.5, make_source(grid101, 1.0), OperatorParams.make(2.0, 0.5, 1))
    return prob, solve_singular(prob)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
