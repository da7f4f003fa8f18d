import numpy as np
import pytest

from fedcell.agent import DqnAgent, DqnConfig
from fedcell.approximator import NetworkSpec, ParameterSet
from fedcell.env import PowerControlEnv
from fedcell.federation import (
    FederationConfig, FederationError, adapt, broadcast, episodes_to_reach, fedavg, run_federation,
)
from fedcell.geometry import MobilityConfig, load_layout

SPEC = NetworkSpec(3, 2, (4,))


def pset(values):
    return ParameterSet(NetworkSpec(1, 1, ()), np.asarray(values, dtype=float))


def test_two_set_mean():
    assert fedavg([pset([1, 3]), pset([3, 5])]).values.tolist() == [2.0, 4.0]


def test_identical_sets_idempotent(rng):
    p = ParameterSet.init(SPEC, rng)
    out = fedavg([p.copy() for _ in range(5)])
    np.testing.assert_allclose(out.values, p.values, rtol=0, atol=1e-15)
    assert fedavg([p]) == p


def test_matches_scalar_loop(rng):
    sets = [ParameterSet.init(SPEC, rng) for _ in range(4)]
    out = fedavg(sets)
    for i in range(len(out)):
        total = 0.0
        for s in sets:
            total += s.values[i]
        assert abs(out.values[i] - total / 4) <= 1e-12


def test_permutation_invariant(rng):
    sets = [ParameterSet.init(SPEC, rng) for _ in range(4)]
    assert fedavg(sets) == fedavg(sets[::-1]) == fedavg([sets[2], sets[0], sets[3], sets[1]])


def test_fedavg_errors(rng):
    with pytest.raises(ValueError):
        fedavg([])
    with pytest.raises(ValueError, match="differs"):
        fedavg([ParameterSet.init(SPEC, rng), ParameterSet.init(NetworkSpec(3, 2, (5,)), rng)])


def test_broadcast_overwrites_online_and_target(rng):
    agents = [DqnAgent(3, 2, DqnConfig(hidden_dims=(4,)), seed=k) for k in range(3)]
    g = ParameterSet.init(SPEC, rng)
    assert broadcast(g, agents)
    for a in agents:
        assert a.online == g and a.target == g
        assert a.online.values is not g.values


def _clients(rooms, n_ues=3, steps=5):
    cfg = DqnConfig(batch_size=8, hidden_dims=(8,), replay_capacity=200)
    envs = [PowerControlEnv(load_layout(r), mobility=MobilityConfig(n_ues=n_ues), steps_per_episode=steps, seed=k)
            for k, r in enumerate(rooms)]
    agents = [DqnAgent(e.state_dim, e.n_actions, cfg, seed=k) for k, e in enumerate(envs)]
    return envs, agents


def test_rounds_and_boundaries():
    rooms = ("A", "B", "C", "D")
    envs, agents = _clients(rooms)
    seen = []
    recs = run_federation(FederationConfig(rooms, aggregation_cycle=3, rounds=3), envs, agents,
                          on_round=seen.append)
    assert [r.episodes_per_client for r in recs] == [3, 6, 9]
    assert seen == recs
    for r in recs:
        assert r.broadcast_verified
        assert all(len(logs) == 3 for logs in r.client_logs)
        assert r.global_params.spec == agents[0].spec
    # episode numbering continues across rounds, epsilon decays over the whole plan
    eps = [l.epsilon for r in recs for l in r.client_logs[0]]
    assert eps[0] == 0.9 and all(b <= a for a, b in zip(eps, eps[1:]))
    assert [l.episode for r in recs for l in r.client_logs[1]] == list(range(9))
    # replay wiped after each upload
    assert all(len(a.replay) == 0 for a in agents)


def test_global_is_mean_of_uploads():
    envs, agents = _clients(("A", "B"))
    recs = run_federation(FederationConfig(("A", "B"), aggregation_cycle=2, rounds=1), envs, agents)
    # clients still hold their uploaded (pre-broadcast) parameters
    want = fedavg([a.online for a in agents])
    assert recs[0].global_params == want
    assert recs[0].client_digests == [a.online.digest() for a in agents]


def test_single_client_degenerates_to_solo():
    envs, agents = _clients(("A",))
    recs = run_federation(FederationConfig(("A",), aggregation_cycle=2, rounds=2), envs, agents)
    for r in recs:
        assert r.client_digests == [r.global_digest]


def test_client_failure_is_reported():
    envs, agents = _clients(("A", "B"))

    def boom():
        raise RuntimeError("disk on fire")

    envs[1].reset = boom
    with pytest.raises(FederationError, match=r"client 1 \(room B\) failed in round 0: disk on fire"):
        run_federation(FederationConfig(("A", "B"), aggregation_cycle=1, rounds=1), envs, agents)


def test_mismatched_clients():
    envs, agents = _clients(("A", "B"))
    with pytest.raises(ValueError):
        run_federation(FederationConfig(("A", "B", "C")), envs, agents)


def test_config_validation():
    with pytest.raises(ValueError):
        FederationConfig(rooms=())
    with pytest.raises(ValueError):
        FederationConfig(aggregation_cycle=0)
    assert FederationConfig().aggregation_cycle == 380 and FederationConfig().n_clients == 4


# -- adaptation --------------------------------------------------------------------

def test_zero_episode_adapt_is_noop(rng):
    envs, agents = _clients(("E",))
    g = agents[0].online.copy()
    res = adapt(g, envs[0], agents[0].cfg, 0)
    assert res.logs == [] and res.agent.online == g


def test_twins_share_exploration_stream():
    env_a = PowerControlEnv(load_layout("E"), mobility=MobilityConfig(n_ues=3), steps_per_episode=4, seed=5)
    env_b = PowerControlEnv(load_layout("E"), mobility=MobilityConfig(n_ues=3), steps_per_episode=4, seed=5)
    cfg = DqnConfig(batch_size=64, hidden_dims=(8,))
    g = ParameterSet.init(NetworkSpec(env_a.state_dim, env_a.n_actions, (8,)), np.random.default_rng(99))
    pre = adapt(g, env_a, cfg, 2, seed=3)
    scratch = adapt(None, env_b, cfg, 2, seed=3)
    # same env seed and exploration stream, different weights; with epsilon = 0.9 and too
    # few transitions to train, the random draws line up step for step
    assert pre.agent.online != scratch.agent.online
    assert [l.epsilon for l in pre.logs] == [l.epsilon for l in scratch.logs]
    np.testing.assert_array_equal(env_a.positions_at(4), env_b.positions_at(4))


def test_adapt_dimension_mismatch():
    env = PowerControlEnv(load_layout("E"), mobility=MobilityConfig(n_ues=3), steps_per_episode=4)
    with pytest.raises(ValueError, match="needs"):
        adapt(ParameterSet.init(NetworkSpec(64, 7, (8,)), np.random.default_rng(0)), env, DqnConfig(hidden_dims=(8,)), 1)


def test_episodes_to_reach():
    curve = [0, 0, 0, 5, 8, 10, 10, 10, 10, 10]
    assert episodes_to_reach(curve, 0.8, window=1) == 4
    assert episodes_to_reach(curve, 0.8, window=3) == 5
    assert episodes_to_reach([3, 3, 3], 0.8, window=2, baseline=5) == 3
    assert episodes_to_reach([], 0.8) == 0
    # baseline shifts the levels: 80% of the way from 4 to 10 is 8.8
    assert episodes_to_reach([4, 6, 8, 9, 10, 10], 0.8, window=1, baseline=4) == 3
