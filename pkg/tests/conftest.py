import math

import pytest

from mmc_modlab.core import OperatingPoint, preset

# Corner points of the required range used throughout the tests.
POINTS = {
    "A": OperatingPoint(1.0, math.pi / 6),
    "B": OperatingPoint(1.0, -math.pi / 6),
    "C": OperatingPoint(1.0, -5 * math.pi / 6),
    "D": OperatingPoint(1.0, 5 * math.pi / 6),
}

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def table1():
    return preset("table1")


@pytest.fixture(scope="session")
def params(table1):
    return table1.params


@pytest.fixture(scope="session")
def rng_range(table1):
    return table1.required


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
