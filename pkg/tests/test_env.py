import collections
import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goalevo import env as env_mod
from goalevo.configio import ConfigError
from goalevo.env import (ATTACK, MOVE_FORWARD, NOOP, EpisodeFinishedError,
                         GridBattleEnv, Item, Measurements, Monster,
                         episode_fitness, hard_scenario, no_ammo_scenario,
                         normalize_measurements, observation_size,
                         original_scenario, scenario_preset, write_trace_csv)

from conftest import clear_interior_walls, empty_room, make_scenario, place_agent


# -- presets -----------------------------------------------------------------


def test_original_preset_initial_measurements():
    env = GridBattleEnv(original_scenario())
    assert env.reset(7) == Measurements(ammo=20, health=100, kills=0)


def test_hard_preset_initial_measurements():
    env = GridBattleEnv(hard_scenario())
    assert env.reset(7) == Measurements(ammo=0, health=10, kills=0)


def test_hard_differs_from_original_exactly_in_four_fields():
    orig = dataclasses.asdict(original_scenario())
    hard = dataclasses.asdict(hard_scenario())
    changed = {k for k in orig if orig[k] != hard[k]}
    assert changed == {"monster_health", "initial_health", "death_penalty",
                       "initial_ammo", "preset_name"}
    assert hard["monster_health"] == 2 * orig["monster_health"]
    assert hard["initial_health"] == 10
    assert hard["death_penalty"] == 100.0
    assert hard["initial_ammo"] == 0


def test_no_ammo_equals_hard_without_ammo_packs():
    hard = dataclasses.asdict(hard_scenario())
    noam = dataclasses.asdict(no_ammo_scenario())
    changed = {k for k in hard if hard[k] != noam[k]}
    assert changed == {"n_ammo_packs", "preset_name"}
    assert noam["n_ammo_packs"] == 0


def test_no_ammo_env_spawns_zero_ammo_items():
    env = GridBattleEnv(no_ammo_scenario())
    for seed in (0, 1, 99):
        env.reset(seed)
        assert all(item.kind != env_mod.ITEM_AMMO for item in env.items)


def test_unknown_preset_rejected():
    with pytest.raises(ConfigError):
        scenario_preset("nightmare")


def test_config_error_when_entities_exceed_free_cells():
    cfg = make_scenario(grid_width=6, grid_height=6, n_monsters=40)
    with pytest.raises(ConfigError):
        GridBattleEnv(cfg).reset(0)


# -- reset structure -----------------------------------------------------------


def _reachable_from(walls, start):
    seen = {start}
    queue = collections.deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nxt = (r + dr, c + dc)
            if nxt not in seen and not walls[nxt]:
                seen.add(nxt)
                queue.append(nxt)
    return seen


@pytest.mark.parametrize("seed", [0, 3, 17])
def test_every_free_cell_reachable_from_spawn(seed):
    env = GridBattleEnv(original_scenario())
    env.reset(seed)
    reach = _reachable_from(env.walls, (env.agent_row, env.agent_col))
    free = {tuple(c) for c in np.argwhere(~env.walls).tolist()}
    assert reach == free


@pytest.mark.parametrize("seed", [0, 3, 17])
def test_entities_spawn_on_distinct_free_cells(seed):
    env = GridBattleEnv(original_scenario())
    env.reset(seed)
    spots = [(env.agent_row, env.agent_col)]
    spots += [(m.row, m.col) for m in env.monsters]
    spots += [(i.row, i.col) for i in env.items]
    assert len(spots) == len(set(spots))
    for r, c in spots:
        assert not env.walls[r, c]
    assert len(env.monsters) == env.config.n_monsters
    assert len(env.items) == env.config.n_ammo_packs + env.config.n_health_kits


def test_reset_is_bit_identical_for_same_seed():
    a, b = GridBattleEnv(original_scenario()), GridBattleEnv(original_scenario())
    a.reset(42)
    b.reset(42)
    assert a.state_snapshot() == b.state_snapshot()


def test_different_seeds_give_different_worlds():
    a, b = GridBattleEnv(original_scenario()), GridBattleEnv(original_scenario())
    a.reset(1)
    b.reset(2)
    assert a.state_snapshot() != b.state_snapshot()


def test_trajectory_determinism():
    actions = np.random.default_rng(9).integers(0, 6, size=300)
    snaps = []
    for _ in range(2):
        env = GridBattleEnv(original_scenario())
        env.reset(5)
        for action in actions:
            _, done = env.step(int(action))
            if done:
                break
        snaps.append(env.state_snapshot())
    assert snaps[0] == snaps[1]


# -- step mechanics --------------------------------------------------------------


def test_blocked_move_keeps_position():
    env = GridBattleEnv(empty_room())
    env.reset(0)
    clear_interior_walls(env)
    place_agent(env, 1, 5, heading=0)  # facing the top border wall
    m0 = env.measurements
    env.step(MOVE_FORWARD)
    assert (env.agent_row, env.agent_col) == (1, 5)
    assert env.steps == 1
    assert env.measurements == m0


def test_attack_with_zero_ammo_changes_nothing_but_time():
    env = GridBattleEnv(empty_room(initial_ammo=0))
    env.reset(0)
    snap_before = env.state_snapshot()
    m, done = env.step(ATTACK)
    assert m == Measurements(0, 100, 0)
    assert env.steps == 1
    assert not done
    after = env.state_snapshot()
    assert after["measurements"] == snap_before["measurements"]


def test_attack_kills_adjacent_monster():
    # hand-simulated transition: monster one cell ahead with 1 health, ammo 3
    cfg = empty_room(initial_ammo=3, monster_respawn=False)
    env = GridBattleEnv(cfg)
    env.reset(0)
    clear_interior_walls(env)
    place_agent(env, 10, 10, heading=0)
    env.monsters = [Monster(9, 10, health=1)]
    m, _ = env.step(ATTACK)
    assert m == Measurements(ammo=2, health=100, kills=1)
    assert env.monsters == []


def test_attack_respects_walls_and_range():
    cfg = empty_room(initial_ammo=5, monster_respawn=False)
    env = GridBattleEnv(cfg)
    env.reset(0)
    clear_interior_walls(env)
    place_agent(env, 10, 10, heading=0)
    # behind a wall: ray blocked
    env.walls[8, 10] = True
    env.monsters = [Monster(7, 10, health=1)]
    env.step(ATTACK)
    assert env.kills == 0 and env.monsters[0].health == 1
    # beyond attack range (6 > 5)
    env.walls[8, 10] = False
    env.monsters = [Monster(10 - 6, 10, health=1)]
    place_agent(env, 10, 10, heading=0)
    env.step(ATTACK)
    assert env.kills == 0
    # within range, clear line
    env.monsters = [Monster(10 - 5, 10, health=1)]
    place_agent(env, 10, 10, heading=0)
    env.step(ATTACK)
    assert env.kills == 1


def _pin_monster(env, row, col, health):
    """Wall the monster in so random moves cannot relocate it."""
    env.monsters = [Monster(row, col, health)]
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        r, c = row + dr, col + dc
        if (r, c) != (env.agent_row, env.agent_col):
            env.walls[r, c] = True


def test_multi_hit_monster_needs_multiple_bullets():
    # adjacent pinned monster: the second bullet lands the kill
    cfg = empty_room(initial_ammo=5, monster_health=2, monster_damage=4,
                     monster_respawn=False)
    env = GridBattleEnv(cfg)
    env.reset(0)
    clear_interior_walls(env)
    place_agent(env, 10, 10, heading=2)  # facing south
    _pin_monster(env, 11, 10, health=2)
    m, _ = env.step(ATTACK)
    assert (m.ammo, m.kills) == (4, 0)
    assert env.monsters[0].health == 1
    m, _ = env.step(ATTACK)
    assert (m.ammo, m.kills) == (3, 1)
    assert env.monsters == []
    # any damage taken is a whole number of bites
    assert (100 - m.health) % cfg.monster_damage == 0


def test_monster_respawns_away_from_agent():
    cfg = empty_room(size=31, initial_ammo=1, monster_respawn=True)
    env = GridBattleEnv(cfg)
    env.reset(0)
    clear_interior_walls(env)
    place_agent(env, 15, 15, heading=0)
    env.monsters = [Monster(14, 15, health=1)]
    env.step(ATTACK)
    assert env.kills == 1
    assert len(env.monsters) == 1
    m = env.monsters[0]
    assert m.health == cfg.monster_health
    assert max(abs(m.row - 15), abs(m.col - 15)) >= env_mod.RESPAWN_MIN_DIST


def test_item_pickup_and_respawn_cycle():
    cfg = empty_room(initial_ammo=0, item_respawn_steps=3)
    env = GridBattleEnv(cfg)
    env.reset(0)
    clear_interior_walls(env)
    place_agent(env, 10, 10, heading=0)
    env.items = [Item(9, 10, env_mod.ITEM_AMMO)]
    env.step(MOVE_FORWARD)  # walk onto the pack
    assert env.ammo == cfg.ammo_per_pack
    assert env.items[0].respawn_timer == 2  # set to 3, one tick elapsed
    env.step(NOOP)
    env.step(NOOP)
    assert env.items[0].active
    env.step(NOOP)  # still standing on it: picked up again
    assert env.ammo == 2 * cfg.ammo_per_pack


def test_health_kit_ignored_at_full_health():
    cfg = empty_room()
    env = GridBattleEnv(cfg)
    env.reset(0)
    clear_interior_walls(env)
    place_agent(env, 10, 10, heading=0)
    env.items = [Item(9, 10, env_mod.ITEM_HEALTH)]
    env.step(MOVE_FORWARD)
    assert env.health == 100
    assert env.items[0].active  # kit not consumed


def test_health_kit_caps_at_100():
    cfg = empty_room(initial_health=95, health_per_kit=20)
    env = GridBattleEnv(cfg)
    env.reset(0)
    clear_interior_walls(env)
    place_agent(env, 10, 10, heading=0)
    env.items = [Item(9, 10, env_mod.ITEM_HEALTH)]
    env.step(MOVE_FORWARD)
    assert env.health == 100
    assert not env.items[0].active


def test_adjacent_monster_bites_in_whole_damage_units():
    cfg = empty_room(monster_damage=4, episode_length=80)
    env = GridBattleEnv(cfg)
    env.reset(0)
    clear_interior_walls(env)
    place_agent(env, 10, 10, heading=0)
    _pin_monster(env, 10, 11, health=2)
    # bites land on roughly half the steps; wait for the first one
    for _ in range(60):
        m, _ = env.step(NOOP)
        if m.health < 100:
            break
    assert m.health == 96
    assert env.monsters[0] == Monster(10, 11, 2)  # pinned monster never moved


def test_death_ends_episode():
    cfg = empty_room(initial_health=4, monster_damage=4, episode_length=200)
    env = GridBattleEnv(cfg)
    env.reset(0)
    clear_interior_walls(env)
    place_agent(env, 10, 10, heading=0)
    _pin_monster(env, 10, 11, health=2)
    done = False
    while not done:
        m, done = env.step(NOOP)
    assert not env.alive and m.health == 0
    assert env.steps < 200  # killed well before the step limit


def test_episode_ends_at_length_limit():
    cfg = empty_room(episode_length=3)
    env = GridBattleEnv(cfg)
    env.reset(0)
    for _ in range(2):
        _, done = env.step(NOOP)
        assert not done
    _, done = env.step(NOOP)
    assert done and env.alive


def test_step_after_done_raises():
    cfg = empty_room(episode_length=1)
    env = GridBattleEnv(cfg)
    env.reset(0)
    env.step(NOOP)
    with pytest.raises(EpisodeFinishedError):
        env.step(NOOP)
    env.reset(1)  # reset clears the finished flag
    env.step(NOOP)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.integers(0, 5), min_size=20,
                                           max_size=120))
def test_measurement_invariants_under_random_play(seed, actions):
    env = GridBattleEnv(make_scenario(episode_length=150))
    env.reset(seed)
    prev = env.measurements
    for action in actions:
        m, done = env.step(action)
        assert m.ammo >= 0 and 0 <= m.health <= 100 and m.kills >= prev.kills
        delta_ammo = m.ammo - prev.ammo
        if action == ATTACK:
            allowed = {0, -1, env.config.ammo_per_pack,
                       env.config.ammo_per_pack - 1}
        else:
            allowed = {0, env.config.ammo_per_pack}
        assert delta_ammo in allowed
        prev = m
        if done:
            break
    assert env.measurements == prev


def test_no_ammo_episode_never_gains_ammo():
    env = GridBattleEnv(no_ammo_scenario())
    env.reset(11)
    rng = np.random.default_rng(0)
    done = False
    while not done:
        m, done = env.step(int(rng.integers(6)))
        assert m.ammo == 0


# -- observation -----------------------------------------------------------------


def test_observation_size_formula():
    assert observation_size(4) == 4 * 81 + 3
    assert observation_size(1) == 4 * 9 + 3


def test_empty_window_is_all_zero_with_full_health_endpoints():
    env = GridBattleEnv(empty_room(size=25, initial_ammo=0))
    env.reset(0)
    clear_interior_walls(env)
    place_agent(env, 12, 12, heading=1)  # center: no walls within R=4
    obs = env.observe()
    n = 81
    assert not obs[:4 * n].any()
    np.testing.assert_allclose(obs[4 * n:], [0.0, 1.0, 0.0])


def test_wall_ring_visible_near_border():
    env = GridBattleEnv(empty_room(size=25))
    env.reset(0)
    clear_interior_walls(env)
    place_agent(env, 1, 12, heading=0)  # wall row directly ahead
    obs = env.observe()
    side = 9
    # heading north: the wall row sits one cell ahead = window row 3
    wall = obs[:81].reshape(side, side)
    assert wall[3, :].all()
    assert not wall[4:, 1:8].any()


@pytest.mark.parametrize("heading,monster_pos", [
    (0, (8, 10)),   # north: two cells ahead
    (1, (10, 12)),  # east
    (2, (12, 10)),  # south
    (3, (10, 8)),   # west
])
def test_monster_appears_two_cells_ahead_for_every_heading(heading, monster_pos):
    env = GridBattleEnv(empty_room(size=25))
    env.reset(0)
    clear_interior_walls(env)
    place_agent(env, 10, 10, heading=heading)
    env.monsters = [Monster(monster_pos[0], monster_pos[1], health=2)]
    obs = env.observe()
    side, n = 9, 81
    monster = obs[n:2 * n].reshape(side, side)
    expected = np.zeros((side, side))
    expected[2, 4] = 1.0  # two ahead of center (4,4)
    np.testing.assert_array_equal(monster, expected)


def test_right_side_entity_lands_right_of_center():
    env = GridBattleEnv(empty_room(size=25))
    env.reset(0)
    clear_interior_walls(env)
    place_agent(env, 10, 10, heading=0)  # north: right = east
    env.items = [Item(10, 13, env_mod.ITEM_AMMO)]
    obs = env.observe()
    side, n = 9, 81
    ammo_chan = obs[2 * n:3 * n].reshape(side, side)
    assert ammo_chan[4, 7] == 1.0 and ammo_chan.sum() == 1.0


def test_inactive_items_invisible():
    env = GridBattleEnv(empty_room(size=25))
    env.reset(0)
    clear_interior_walls(env)
    place_agent(env, 10, 10, heading=0)
    env.items = [Item(9, 10, env_mod.ITEM_AMMO, respawn_timer=5)]
    obs = env.observe()
    assert not obs[2 * 81:3 * 81].any()


def test_observation_deterministic():
    env = GridBattleEnv(original_scenario())
    env.reset(3)
    np.testing.assert_array_equal(env.observe(), env.observe())


def test_normalization_scales_and_clipping():
    np.testing.assert_allclose(
        normalize_measurements(Measurements(20, 50, 5)),
        [0.5, 0.5, 0.5])
    np.testing.assert_allclose(
        normalize_measurements(Measurements(100, 100, 100)),
        [1.0, 1.0, 1.0])


# -- fitness and interfaces -------------------------------------------------------


def _record(kills, died):
    return env_mod.EpisodeRecord(kills=kills, died=died, steps=100,
                                 final_measurements=Measurements(0, 0, kills))


def test_fitness_original_no_death_penalty():
    assert episode_fitness(_record(12, died=True), original_scenario()) == 12.0


def test_fitness_hard_death_penalty():
    assert episode_fitness(_record(5, died=True), hard_scenario()) == -95.0


def test_fitness_hard_survivor():
    assert episode_fitness(_record(0, died=False), hard_scenario()) == 0.0


def test_scenario_file_roundtrip(tmp_path):
    path = tmp_path / "scenario.cfg"
    path.write_text("preset_name = hard\nmonster_damage = 7\n"
                    "# comment line\nepisode_length = 99\n")
    cfg = env_mod.load_scenario(path)
    assert cfg.preset_name == "hard"
    assert cfg.monster_damage == 7
    assert cfg.episode_length == 99
    assert cfg.initial_health == 10  # inherited from the hard preset


def test_scenario_file_unknown_key_rejected(tmp_path):
    path = tmp_path / "scenario.cfg"
    path.write_text("monster_speed = 3\n")
    with pytest.raises(ConfigError):
        env_mod.load_scenario(path)


def test_trace_csv_layout(tmp_path):
    rows = [(0, "noop", 20, 100, 0, 5, 6), (1, "attack", 19, 100, 1, 5, 6)]
    path = tmp_path / "trace.csv"
    write_trace_csv(rows, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "step,action,ammo,health,kills,agent_x,agent_y"
    assert lines[1] == "0,noop,20,100,0,5,6"
