"""FedAvg over per-room DQN clients, plus fine-tuning in an unseen room."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .agent import DqnAgent, DqnConfig, EpisodeLog, run_episodes
from .approximator import ParameterSet
from .env import PowerControlEnv

log = logging.getLogger(__name__)

FEDERATION_COLUMNS = (
    "round", "episodes_per_client", "global_digest", "client_digests",
    "client_mean_rewards", "broadcast_verified",
)


class FederationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FederationConfig:
    rooms: tuple[str, ...] = ("A", "B", "C", "D")
    aggregation_cycle: int = 380
    rounds: int = 5

    def __post_init__(self):
        object.__setattr__(self, "rooms", tuple(self.rooms))
        if len(self.rooms) < 1:
            raise ValueError("federation needs at least one client room")
        if self.aggregation_cycle < 1:
            raise ValueError(f"aggregation_cycle must be >= 1, got {self.aggregation_cycle}")
        if self.rounds < 0:
            raise ValueError(f"rounds must be >= 0, got {self.rounds}")

    @property
    def n_clients(self) -> int:
        return len(self.rooms)


@dataclass
class RoundRecord:
    round: int
    episodes_per_client: int
    client_digests: list[str]
    global_digest: str
    client_mean_rewards: list[float]
    broadcast_verified: bool
    client_logs: list[list[EpisodeLog]] = field(default_factory=list, repr=False)
    global_params: ParameterSet | None = field(default=None, repr=False)

    def row(self) -> list:
        return [
            self.round, self.episodes_per_client, self.global_digest,
            ";".join(self.client_digests),
            ";".join(f"{r:.6f}" for r in self.client_mean_rewards),
            int(self.broadcast_verified),
        ]


def fedavg(param_sets: Sequence[ParameterSet]) -> ParameterSet:
    """Unweighted elementwise mean of client parameters.

    Each coordinate is summed in sorted order, so the result is bit-for-bit
    independent of client order.
    """
    if not param_sets:
        raise ValueError("fedavg needs at least one parameter set")
    spec = param_sets[0].spec
    for k, p in enumerate(param_sets):
        if p.spec != spec:
            raise ValueError(f"client {k} network {p.spec.dims} differs from client 0 {spec.dims}")
    stacked = np.sort(np.stack([p.values for p in param_sets]), axis=0)
    return ParameterSet(spec, stacked.mean(axis=0))


def broadcast(global_params: ParameterSet, agents: Sequence[DqnAgent]) -> bool:
    """Copy the global model into every client's online and target nets."""
    for agent in agents:
        agent.load_params(global_params)
    return all(
        np.array_equal(a.online.values, global_params.values) and np.array_equal(a.target.values, global_params.values)
        for a in agents
    )


def run_federation(cfg: FederationConfig, envs: Sequence[PowerControlEnv], agents: Sequence[DqnAgent],
                   initial: ParameterSet | None = None,
                   on_round: Callable[[RoundRecord], None] | None = None) -> list[RoundRecord]:
    """Synchronous rounds: broadcast, E local episodes each, upload, wipe replay, average."""
    if not (len(envs) == len(agents) == cfg.n_clients):
        raise ValueError(f"need one env and one agent per client ({cfg.n_clients}), got {len(envs)} / {len(agents)}")
    global_params = (initial or agents[0].online).copy()
    for k, a in enumerate(agents):
        if a.spec != global_params.spec:
            raise ValueError(f"client {k} network {a.spec.dims} differs from global {global_params.spec.dims}")
    planned = cfg.aggregation_cycle * cfg.rounds
    records = []
    for rnd in range(cfg.rounds):
        verified = broadcast(global_params, agents)
        uploads, client_logs = [], []
        for k, (env, agent) in enumerate(zip(envs, agents)):
            try:
                logs = run_episodes(env, agent, cfg.aggregation_cycle, total_episodes=planned)
            except Exception as exc:
                raise FederationError(f"client {k} (room {cfg.rooms[k]}) failed in round {rnd}: {exc}") from exc
            client_logs.append(logs)
            uploads.append(agent.online.copy())
        for agent in agents:
            agent.replay.clear()
        global_params = fedavg(uploads)
        rec = RoundRecord(
            round=rnd,
            episodes_per_client=(rnd + 1) * cfg.aggregation_cycle,
            client_digests=[p.digest() for p in uploads],
            global_digest=global_params.digest(),
            client_mean_rewards=[float(np.mean([l.cumulative_reward for l in logs])) for logs in client_logs],
            broadcast_verified=verified,
            client_logs=client_logs,
            global_params=global_params.copy(),
        )
        log.info("round %d: global %s, mean rewards %s", rnd, rec.global_digest, rec.client_mean_rewards)
        records.append(rec)
        if on_round is not None:
            on_round(rec)
    return records


# ---------------------------------------------------------------------------
# adaptation

@dataclass
class AdaptResult:
    logs: list[EpisodeLog]
    agent: DqnAgent


def adapt(global_params: ParameterSet | None, env: PowerControlEnv, cfg: DqnConfig, n_episodes: int,
          seed: int = 0) -> AdaptResult:
    """Fine-tune a fresh agent in ``env`` starting from ``global_params``.

    ``global_params=None`` gives the scratch twin: same seed, same
    exploration and replay streams, random initial weights.
    """
    if global_params is not None:
        want = (env.state_dim, env.n_actions)
        have = (global_params.spec.input_dim, global_params.spec.output_dim)
        if want != have:
            raise ValueError(
                f"global model maps {have[0]} state values to {have[1]} actions; "
                f"room {env.layout.name} needs {want[0]} -> {want[1]}"
            )
    agent = DqnAgent(env.state_dim, env.n_actions, cfg, seed=seed, params=global_params)
    logs = run_episodes(env, agent, n_episodes)
    return AdaptResult(logs, agent)


def episodes_to_reach(curve: Sequence[float], fraction: float = 0.8, window: int = 10,
                      baseline: float = 0.0) -> int:
    """First episode at which the smoothed curve reaches ``fraction`` of its final level.

    Levels are measured above ``baseline``. The curve is smoothed with a
    trailing median over ``window`` episodes and the final level is the
    median of the last ``window`` raw values. Returns ``len(curve)`` when
    the threshold is never reached or the final level is not above the
    baseline.
    """
    y = np.asarray(curve, dtype=float) - baseline
    if y.size == 0:
        return 0
    final = float(np.median(y[-window:]))
    if final <= 0:
        return len(y)
    smooth = np.array([np.median(y[max(0, i - window + 1):i + 1]) for i in range(len(y))])
    hit = np.flatnonzero(smooth >= fraction * final)
    return int(hit[0]) if hit.size else len(y)
