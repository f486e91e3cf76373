import numpy as np
import pytest

from semantic_explore.env import GenConfig, generate_floorplan
from semantic_explore.local_mapper import PatchPrior

# coarse worlds keep episode-level tests fast; geometry matches the 4.8 m window
DESK_GEN = GenConfig(cell_size=0.075)
DESK_WINDOW = 64


@pytest.fixture(scope="session")
def desk_gen():
    return DESK_GEN


@pytest.fixture(scope="session")
def desk_prior():
    grids = [generate_floorplan(1000 + i, DESK_GEN) for i in range(6)]
    return PatchPrior(reach=24, window=DESK_WINDOW, n_views=8).fit(grids)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the test run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
