import numpy as np
import pytest

from bumpercar.harness import generate_dataset, rich_profile


@pytest.fixture(scope="session")
def rich_5min():
    """Five minutes of noiseless generator data with ground-truth labels."""
    return generate_dataset(rich_profile(300.0, seed=1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
