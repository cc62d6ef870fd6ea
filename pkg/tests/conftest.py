import numpy as np
import pytest

from channelstab.config import RunConfig
from channelstab.grid import build_grid
from channelstab.operators import ModeIndex, assemble_pencil
from channelstab.pipeline import build_design
from channelstab.spectra import choose_actuators, solve_pencil_eigen
from channelstab.feedback import build_gains
from channelstab.steady import PhysParams, build_steady_state

DESK = PhysParams(C_U=48000.0)
MILD = PhysParams()


@pytest.fixture(scope="session")
def grid64():
    return build_grid(64)


@pytest.fixture(scope="session")
def grid96():
    return build_grid(96)


@pytest.fixture(scope="session")
def steady_mild(grid64):
    return build_steady_state(MILD, grid64)


@pytest.fixture(scope="session")
def steady_desk(grid64):
    return build_steady_state(DESK, grid64)


@pytest.fixture(scope="session")
def steady_desk96(grid96):
    return build_steady_state(DESK, grid96)


@pytest.fixture(scope="session")
def desk_mode20(grid96, steady_desk96):
    """Pencil, eigen set, actuator and gains of the unstable pair's (2, 0) member."""
    pencil = assemble_pencil(ModeIndex(2, 0), grid96, steady_desk96)
    es = solve_pencil_eigen(pencil, grid96)
    actuator = choose_actuators([es])
    gains = build_gains(pencil, es, actuator, grid96)
    return pencil, es, actuator, gains


@pytest.fixture(scope="session")
def design96(grid96, steady_desk96):
    """Full control design at the default grid; scan radius 4 covers M."""
    config = RunConfig(n=96, scan_limit=4, threads=8)
    return build_design(config, grid=grid96, steady=steady_desk96)
