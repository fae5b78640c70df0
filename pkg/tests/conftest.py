import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tilepile.library import builtin_names, get_family, get_spec

settings.register_profile("tilepile", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("tilepile")

PLANAR = ["square", "triangular", "hexagonal", "tetrakis"]


@pytest.fixture(scope="session")
def all_specs():
    return {name: get_spec(name) for name in builtin_names()}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def small_open_square(m=4):
    from tilepile.tiling import build_open

    return build_open(get_spec("square"), get_family("square"), m)


@pytest.fixture(scope="session")
def local_limit_reports(all_specs):
    from tilepile.greens import local_limit_check

    return {name: local_limit_check(spec) for name, spec in all_specs.items()}
