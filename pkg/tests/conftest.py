import numpy as np
import pytest

from aris_hppo.channel import ChannelParams, Topology
from aris_hppo.env import CompNomaEnv, EnvConfig


@pytest.fixture
def topology():
    return Topology.default()


@pytest.fixture
def params():
    return ChannelParams()


@pytest.fixture
def small_params():
    return ChannelParams(n_aris=3, n_tris=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_env(topology, small_params):
    return CompNomaEnv(topology, small_params, EnvConfig(horizon=10), n_envs=2)
