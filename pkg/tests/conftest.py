import numpy as np
import pytest

from evtradio.channel import build_scenario
from evtradio.powermap import generate_maps

DESK_MAPS = {"n_samples": 20_000, "n_locations": 200}

# a grid small enough that the full pipeline runs in a couple of seconds
TINY_SCENARIO = {"grid": {"nx": 24, "ny": 16}}
TINY_MAPS = {"n_samples": 4_000, "n_locations": 40}


@pytest.fixture(scope="session")
def desk_scenario():
    return build_scenario(profile="desk")


@pytest.fixture(scope="session")
def desk_maps(desk_scenario):
    return generate_maps(desk_scenario, DESK_MAPS)


@pytest.fixture(scope="session")
def tiny_scenario():
    return build_scenario(TINY_SCENARIO)


@pytest.fixture(scope="session")
def tiny_maps(tiny_scenario):
    return generate_maps(tiny_scenario, TINY_MAPS)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
