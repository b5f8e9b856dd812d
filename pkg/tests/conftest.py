import numpy as np
import pytest

from ncc_ued.env import make_grid_level, make_matrix_level


@pytest.fixture
def empty3():
    return make_grid_level(3, 3, [[0] * 3] * 3, (0, 0), (2, 2))


@pytest.fixture
def matrix4():
    # asymmetric 2-action game with four levels; the zero policy is far from stationary
    return [make_matrix_level(p) for p in ((0.637, 0.27), (0.041, 0.017), (0.813, 0.913), (0.607, 0.729))]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""
    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
