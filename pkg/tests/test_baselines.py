import numpy as np
import pytest

from fedcell.baselines import BaselinePolicy, exhaustive_action, objective_value, random_action, score_actions
from fedcell.env import DEFAULT_LEVELS_DBM, PowerControlEnv, build_action_space
from fedcell.geometry import MobilityConfig
from conftest import rect_layout, solo_env
from test_agent import CHI2_99, chi_square


def test_singleton_space(rng):
    space = build_action_space([24.0], 2)
    assert all(random_action(space, rng) == 0 for _ in range(20))


def test_random_uniform_over_full_space(rng):
    space = build_action_space(DEFAULT_LEVELS_DBM, 2, "full")
    counts = np.bincount([random_action(space, rng) for _ in range(10_000)], minlength=16)
    assert chi_square(counts) < CHI2_99[15]


def test_random_reproducible():
    space = build_action_space(DEFAULT_LEVELS_DBM, 2, "full")

    def seq():
        rng = np.random.default_rng(4)
        return [random_action(space, rng) for _ in range(50)]

    assert seq() == seq()


def test_exhaustive_picks_max_power_for_lone_cell():
    env = solo_env()
    env.reset()
    scores = score_actions(env, "q1")
    # brute force: rate is monotone in power with no interferer
    assert np.all(np.diff(scores) > 0)
    assert env.space.combos[exhaustive_action(env, objective="q1")] == (24.0,)
    assert env.space.combos[exhaustive_action(env)] == (24.0,)


def test_symmetric_instance_ties_to_lowest_index():
    lay = rect_layout()
    # mirror-image UE pairs around x = 9
    ue = [[3.0, 2.0, 1.0], [15.0, 2.0, 1.0], [6.0, 4.5, 1.0], [12.0, 4.5, 1.0]]
    space = build_action_space(DEFAULT_LEVELS_DBM, 2, "full")
    env = PowerControlEnv(lay, mobility=MobilityConfig(n_ues=4), space=space, steps_per_episode=2, static_positions=ue)
    env.reset()
    scores = score_actions(env)
    for a, combo in enumerate(space.combos):
        assert scores[a] == pytest.approx(scores[space.index_of(combo[::-1])], abs=1e-9)
    best = exhaustive_action(env)
    assert best == int(np.flatnonzero(scores == scores.max())[0])


def test_scoring_does_not_mutate_env(small_env):
    small_env.reset(seed=3)
    t, powers, state = small_env.t, small_env.powers.copy(), small_env.state.copy()
    score_actions(small_env)
    assert small_env.t == t
    np.testing.assert_array_equal(small_env.powers, powers)
    np.testing.assert_array_equal(small_env.state, state)


def test_exhaustive_score_matches_next_step(small_env):
    small_env.reset(seed=4)
    scores = score_actions(small_env, "q1")
    a = exhaustive_action(small_env, objective="q1")
    out = small_env.step(a)
    assert out.q1 == pytest.approx(scores[a])
    assert out.q1 == pytest.approx(scores.max())


def test_objective_errors(small_env):
    small_env.reset()
    with pytest.raises(ValueError):
        objective_value(small_env.last, "median")
    with pytest.raises(ValueError):
        BaselinePolicy("greedy")
    with pytest.raises(ValueError):
        exhaustive_action(small_env, space=build_action_space(DEFAULT_LEVELS_DBM, 2, "full"))


def test_policy_callable(small_env):
    s = small_env.reset()
    assert 0 <= BaselinePolicy("random", seed=1)(small_env, s) < small_env.n_actions
    assert BaselinePolicy("exhaustive")(small_env, s) == exhaustive_action(small_env)
