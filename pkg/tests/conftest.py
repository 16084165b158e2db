import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dr2s.cli import gen_illustrative

# conic solves inside property bodies routinely outlast hypothesis' default
# 200ms deadline; wall-clock flakiness is not what these tests are after
settings.register_profile(
    "suite", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

# one line per acceptance criterion, printed after the run so the verdicts
# survive pytest's output capture
ACCEPTANCE_LINES: list = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def illustrative():
    return gen_illustrative()


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)
