import dataclasses

import numpy as np
import pytest

from goalevo import env as env_mod
from goalevo import neat


def make_scenario(**overrides) -> env_mod.ScenarioConfig:
    return dataclasses.replace(env_mod.original_scenario(), **overrides)


def empty_room(size=21, episode_length=50, **overrides) -> env_mod.ScenarioConfig:
    """No monsters, no items, no interior walls beyond what the generator
    happens to place; useful for hand-built situations."""
    return make_scenario(
        grid_width=size, grid_height=size, n_monsters=0, n_ammo_packs=0,
        n_health_kits=0, episode_length=episode_length,
        preset_name="custom", **overrides)


def clear_interior_walls(env: env_mod.GridBattleEnv) -> None:
    """Strip everything but the border walls for fully controlled layouts."""
    env.walls[:, :] = False
    env.walls[0, :] = env.walls[-1, :] = True
    env.walls[:, 0] = env.walls[:, -1] = True
    env._free_cells = np.argwhere(~env.walls)


def place_agent(env: env_mod.GridBattleEnv, row: int, col: int,
                heading: int) -> None:
    env.agent_row, env.agent_col, env.heading = row, col, heading


@pytest.fixture
def registry():
    return neat.InnovationRegistry()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
