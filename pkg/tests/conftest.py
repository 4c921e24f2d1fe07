import numpy as np
import pytest

from advloss.datasets import make_blobs
from advloss.model import init_model, train

# shared 2-D, 3-class fixture: clean accuracy about 0.95
SPREAD = 0.11
EPS = 0.09


@pytest.fixture(scope="session")
def blobs_train():
    return make_blobs(2000, 2, 3, seed=1, spread=SPREAD)


@pytest.fixture(scope="session")
def blobs_eval():
    return make_blobs(200, 2, 3, seed=7, spread=SPREAD)


@pytest.fixture(scope="session")
def std_model(blobs_train):
    return train(blobs_train, hidden=(32, 32), epochs=30, seed=0)


@pytest.fixture(scope="session")
def at_model(blobs_train):
    return train(blobs_train, hidden=(32, 32), epochs=30, at_mode="fgsm", epsilon=EPS, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_model():
    return init_model([2, 8, 3], np.random.default_rng(5))


_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert it."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
