import numpy as np
import pytest

from subspace_tbd.scenario import RoomConfig, build_perimeter_array
from subspace_tbd.wavefield import stft_grid


@pytest.fixture
def room():
    return RoomConfig()


@pytest.fixture
def small_array(room):
    return build_perimeter_array(room, 8)


@pytest.fixture
def small_grid():
    # 5 bins out of the band used in the experiments
    return stft_grid(8000.0, 1024, 13, 17)


def random_complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
