import numpy as np
import pytest

from retune.core import Signal


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_signal(rng, shape=(8, 8, 1), scale=1.0):
    return Signal(scale * rng.standard_normal(int(np.prod(shape))), shape)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
