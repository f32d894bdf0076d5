from __future__ import annotations

import pytest

from chemorad.model import InitialProfile, ProblemParams


@pytest.fixture
def params3():
    return ProblemParams(n=3, R=1.0, M=1.0, m=1.0)


@pytest.fixture
def bump():
    return InitialProfile.gaussian(1.0, 0.0, 0.3)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
