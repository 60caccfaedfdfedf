import numpy as np
import pytest

from mixod.data import MixedDataset


def make_dataset(discrete=None, continuous=None, declared=None) -> MixedDataset:
    """Dataset from integer arrays; discrete columns are D1.., continuous C1.."""
    d = {} if discrete is None else {f"D{j + 1}": list(np.asarray(discrete)[:, j]) for j in range(np.asarray(discrete).shape[1])}
    c = {} if continuous is None else {f"C{j + 1}": list(np.asarray(continuous)[:, j]) for j in range(np.asarray(continuous).shape[1])}
    return MixedDataset.from_codes(d, c, declared)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
