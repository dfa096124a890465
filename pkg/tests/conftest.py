import sys

import numpy as np
import pytest

from czlab.measures import make_ball_lebesgue, make_cantor, make_segment_hausdorff


@pytest.fixture(scope="session")
def line():
    return make_segment_hausdorff(2, [[-50, 0], [50, 0]], 10_000)


@pytest.fixture(scope="session")
def cantor5():
    return make_cantor(2, 0.25, 5)


@pytest.fixture(scope="session")
def disc64():
    return make_ball_lebesgue(2, [0, 0], 1.0, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    RESULTS = getattr(mod, "RESULTS", [])
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for check in sorted(RESULTS, key=lambda c: c.id):
            terminalreporter.write_line(check.line())
