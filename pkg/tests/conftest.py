import numpy as np
import pytest

from fpnet.data import synthetic_cifar10
from fpnet.tensor import default_dtype


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


@pytest.fixture
def g():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """60 train / 20 test images in the CIFAR-10 binary layout."""
    return synthetic_cifar10(tmp_path_factory.mktemp("tiny_cifar"), n_train=60, n_test=20, seed=5)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Recorder for acceptance results; lines are echoed in the terminal summary."""
    def record(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
