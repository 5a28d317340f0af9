import math

import numpy as np
import pytest

from flatspec.surface import double_of_triangle, flat_torus

A_IRR = math.pi / math.sqrt(5)
B_IRR = math.pi / math.sqrt(7)
IRRATIONAL_ANGLES = (A_IRR, B_IRR, math.pi - A_IRR - B_IRR)


@pytest.fixture(scope="session")
def torus():
    return flat_torus()


@pytest.fixture(scope="session")
def equilateral():
    return double_of_triangle([math.pi / 3] * 3)


@pytest.fixture(scope="session")
def right_isosceles():
    return double_of_triangle([math.pi / 2, math.pi / 4, math.pi / 4])


@pytest.fixture(scope="session")
def irrational():
    return double_of_triangle(IRRATIONAL_ANGLES)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def mirror_function(g):
    """Lift g(x, y) on the first triangle of a double to both charts (mode 0)."""
    def f(t, x, y, th):
        return g(x, np.where(t == 0, y, -y)) + 0 * th
    return f


ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, ok: bool, detail: str) -> None:
    """Record and print one PASS/FAIL line, then assert."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
