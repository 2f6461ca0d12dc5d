from __future__ import annotations

import pytest

from gridsubset.grid import load_network, reference_network

TWO_BUS = """\
[meta]
base_mva, 100.0

[buses]
# id, kind, voltage_mag, voltage_ang, shunt_susceptance
1, Slack, 1.0, 0.0, 0.0
2, PQ, 1.0, 0.0, 0.0

[branches]
# from, to, r, x, b, mva_rating, is_tie_line
1, 2, 0.0, 0.1, 0.0, 60.0, 1

[generators]
1, Coal, 0.0, 0.0, 200.0, 1.0, 40.0, 1

[loads]
2, 50.0, 0.0
"""


@pytest.fixture
def two_bus_text() -> str:
    return TWO_BUS


@pytest.fixture
def two_bus():
    return load_network(TWO_BUS)


@pytest.fixture(scope="session")
def ref_net():
    return reference_network()


# Acceptance verdicts are collected here and echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
