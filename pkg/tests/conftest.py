"""Shared fixtures and the acceptance-criteria summary hook."""

import numpy as np
import pytest

ACCEPTANCE_RESULTS = []


def record_criterion(number, passed, detail):
    """Collect one acceptance-criterion outcome for the terminal summary."""
    ACCEPTANCE_RESULTS.append((number, bool(passed), detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
