import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FULL_EDGES = [2.3, 5.0, 9.0, 13.0, 23.0, 33.0, 43.0, 53.0, 67.0]
DESK_EDGES = [2.3, 3.5, 5.0, 6.5, 8.0, 10.0, 12.5, 15.0, 18.5]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# rank-1 relative Frobenius errors for the 512 x 512 analysis grid, computed once from the SVD
FULL_GRID_RANK1_ERRORS = [
    0.0221803750811,
    0.0131543337775,
    0.00530293038301,
    0.0124280653575,
    0.00511472828155,
    0.00277369140534,
    0.00173750506526,
    0.00217998704193,
]

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
