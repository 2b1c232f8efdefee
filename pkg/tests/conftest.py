"""Shared fixtures and the acceptance-summary terminal hook."""

import numpy as np
import pytest

#: (criterion label, passed, detail) tuples filled in by test_acceptance
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20250825)


def record_criterion(label: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append((label, passed, detail))
    print(f"{'PASS' if passed else 'FAIL'} {label}: {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(
            f"{'PASS' if passed else 'FAIL'} {label}: {detail}")
