"""DQN client: replay memory, epsilon-greedy policy, target network."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .approximator import AdamState, NetworkSpec, ParameterSet, adam_update, forward, loss_and_grad
from .env import PowerControlEnv

log = logging.getLogger(__name__)

EPISODE_LOG_COLUMNS = ("episode", "cumulative_reward", "mean_q1_mbps", "mean_rate_mbps", "epsilon")


@dataclass(frozen=True)
class DqnConfig:
    gamma: float = 0.98
    epsilon_start: float = 0.9
    epsilon_end: float = 0.05
    # fraction of the planned episodes over which epsilon decays linearly
    epsilon_decay_fraction: float = 0.8
    batch_size: int = 128
    target_update: int = 100
    replay_capacity: int = 50_000
    learning_rate: float = 1e-3
    hidden_dims: tuple[int, ...] = (200, 100, 50)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        for name in ("epsilon_start", "epsilon_end", "epsilon_decay_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {getattr(self, name)}")
        if self.batch_size < 1 or self.batch_size > self.replay_capacity:
            raise ValueError(f"batch_size must be in [1, replay_capacity], got {self.batch_size}")
        if self.target_update < 1:
            raise ValueError("target_update must be >= 1")

    def epsilon(self, episode: int, total_episodes: int) -> float:
        horizon = self.epsilon_decay_fraction * total_episodes
        if horizon <= 0:
            return self.epsilon_end
        frac = min(episode / horizon, 1.0)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class EpisodeLog:
    episode: int
    cumulative_reward: float
    mean_q1_mbps: float
    mean_rate_mbps: float
    epsilon: float

    def row(self) -> list:
        return [self.episode, self.cumulative_reward, self.mean_q1_mbps, self.mean_rate_mbps, self.epsilon]


class ReplayBuffer:
    """Fixed-capacity FIFO over preallocated arrays."""

    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.d = np.zeros(capacity, dtype=bool)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, tr: Transition) -> None:
        i = self._next
        self.s[i], self.a[i], self.r[i], self.s2[i], self.d[i] = tr.state, tr.action, tr.reward, tr.next_state, tr.done
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator):
        """Uniform sample without replacement; returns (s, a, r, s2, done) arrays."""
        idx = rng.choice(self.size, size=n, replace=False)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.d[idx]

    def oldest_first(self) -> list[int]:
        """Slot indices from oldest to newest."""
        if self.size < self.capacity:
            return list(range(self.size))
        return [(self._next + k) % self.capacity for k in range(self.capacity)]

    def clear(self) -> None:
        self._next = 0
        self.size = 0


def select_action(q_values, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform random with probability epsilon, else argmax (lowest index on ties)."""
    q = np.asarray(q_values)
    if q.size == 0:
        raise ValueError("empty Q-value vector")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def td_target(tr: Transition, target_params: ParameterSet, gamma: float) -> float:
    if tr.done:
        return float(tr.reward)
    return float(tr.reward + gamma * forward(target_params, tr.next_state).max())


def td_targets(r, s2, done, target_params: ParameterSet, gamma: float) -> np.ndarray:
    best = forward(target_params, s2).max(axis=1)
    return r + gamma * np.where(done, 0.0, best)


class DqnAgent:
    def __init__(self, state_dim: int, n_actions: int, cfg: DqnConfig = DqnConfig(), seed: int = 0,
                 params: ParameterSet | None = None):
        self.cfg = cfg
        self.spec = NetworkSpec(state_dim, n_actions, cfg.hidden_dims)
        # weight init draws from its own stream so exploration and replay
        # sampling do not depend on whether initial params were supplied
        init_seq, run_seq = np.random.SeedSequence(seed).spawn(2)
        self.rng = np.random.default_rng(run_seq)
        if params is None:
            params = ParameterSet.init(self.spec, np.random.default_rng(init_seq))
        elif params.spec != self.spec:
            raise ValueError(f"initial parameters are for {params.spec.dims}, agent needs {self.spec.dims}")
        self.online = params.copy()
        self.target = params.copy()
        self.adam = AdamState.for_params(self.online, cfg.learning_rate)
        self.replay = ReplayBuffer(cfg.replay_capacity, state_dim)
        self.train_steps = 0
        self.episodes_done = 0

    def act(self, state, epsilon: float) -> int:
        if epsilon > 0 and self.rng.random() < epsilon:
            return int(self.rng.integers(self.spec.output_dim))
        return int(np.argmax(forward(self.online, state)))

    def greedy(self, state) -> int:
        return int(np.argmax(forward(self.online, state)))

    def load_params(self, params: ParameterSet) -> None:
        """Overwrite online and target networks with ``params``."""
        if params.spec != self.spec:
            raise ValueError(f"parameters are for {params.spec.dims}, agent needs {self.spec.dims}")
        self.online.values[...] = params.values
        self.target.values[...] = params.values

    def remember(self, tr: Transition) -> None:
        self.replay.push(tr)

    def train_step(self, batch=None) -> float | None:
        """One Adam step on the mean squared TD error.

        Samples from replay when ``batch`` is None; returns None (no
        update) while the buffer holds fewer than ``batch_size``.
        """
        if batch is None:
            if len(self.replay) < self.cfg.batch_size:
                return None
            batch = self.replay.sample(self.cfg.batch_size, self.rng)
        elif isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], Transition):
            batch = (
                np.stack([t.state for t in batch]),
                np.array([t.action for t in batch]),
                np.array([t.reward for t in batch], dtype=float),
                np.stack([t.next_state for t in batch]),
                np.array([t.done for t in batch]),
            )
        s, a, r, s2, d = batch
        y = td_targets(r, s2, d, self.target, self.cfg.gamma)
        loss, grad = loss_and_grad(self.online, s, a, y)
        adam_update(self.online, grad, self.adam, inplace=True)
        self.train_steps += 1
        if self.train_steps % self.cfg.target_update == 0:
            self.target.values[...] = self.online.values
        return loss


def run_episodes(env: PowerControlEnv, agent: DqnAgent, n_episodes: int, total_episodes: int | None = None,
                 epsilon: float | None = None) -> list[EpisodeLog]:
    """Reset, then T steps of act -> step -> store -> train, per episode.

    Epsilon follows the agent's schedule over ``total_episodes`` (default
    ``n_episodes``) unless a fixed ``epsilon`` is given. Episode numbers
    continue from ``agent.episodes_done``.
    """
    total = n_episodes if total_episodes is None else total_episodes
    logs = []
    for _ in range(n_episodes):
        eps = agent.cfg.epsilon(agent.episodes_done, total) if epsilon is None else epsilon
        state = env.reset()
        ret, q1s, means = 0.0, [], []
        done = False
        while not done:
            a = agent.act(state, eps)
            out = env.step(a)
            agent.remember(Transition(state, a, out.reward, out.state, out.done))
            agent.train_step()
            ret += out.reward
            q1s.append(out.q1)
            means.append(out.mean_rate)
            state, done = out.state, out.done
        logs.append(EpisodeLog(agent.episodes_done, ret, float(np.mean(q1s)), float(np.mean(means)), eps))
        agent.episodes_done += 1
        if agent.episodes_done % 50 == 0:
            log.debug("episode %d reward %.2f q1 %.2f", agent.episodes_done, ret, logs[-1].mean_q1_mbps)
    return logs


def evaluate_policy(env: PowerControlEnv, policy, n_episodes: int) -> list[EpisodeLog]:
    """Roll out ``policy(env, state) -> action`` without learning."""
    logs = []
    for ep in range(n_episodes):
        state = env.reset()
        ret, q1s, means = 0.0, [], []
        done = False
        while not done:
            out = env.step(policy(env, state))
            ret += out.reward
            q1s.append(out.q1)
            means.append(out.mean_rate)
            state, done = out.state, out.done
        logs.append(EpisodeLog(ep, ret, float(np.mean(q1s)), float(np.mean(means)), 0.0))
    return logs


def greedy_policy(agent: DqnAgent):
    return lambda env, state: agent.greedy(state)
