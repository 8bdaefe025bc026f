import numpy as np
import pytest

from domac.config import default_config
from domac.env import GridConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def pp2v1():
    return GridConfig(grid_size=5, n_predators=2, n_preys=1)


@pytest.fixture
def pp4v2():
    return GridConfig(grid_size=7, n_predators=4, n_preys=2)


@pytest.fixture
def tiny_config():
    """PP-2v1 with small networks and short episodes, quick enough for full runs."""
    def make(**overrides):
        base = dict(
            episodes=4,
            env={"max_steps": 15},
            algo={"hidden_dims": (8,)},
            optim={"lr_actor": 1e-3, "lr_critic": 1e-3},
            rollout={"episodes_per_update": 2},
            eval={"every": 1, "episodes": 2, "checkpoint_every": 1},
        )
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(base.get(key), dict):
                base[key] = {**base[key], **value}
            else:
                base[key] = value
        return default_config(**base)
    return make
