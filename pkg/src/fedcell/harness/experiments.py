"""Experiment drivers behind the CLI subcommands.

Every driver writes into an output directory through :class:`OutputDir`,
which stages files and only publishes them once the run succeeds.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..agent import EPISODE_LOG_COLUMNS, DqnAgent, EpisodeLog, evaluate_policy, greedy_policy, run_episodes
from ..approximator import NetworkSpec, load_checkpoint, save_checkpoint
from ..baselines import BaselinePolicy
from ..env import PowerControlEnv, build_action_space
from ..federation import FEDERATION_COLUMNS, RoundRecord, adapt, episodes_to_reach, run_federation
from .config import ExperimentConfig

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METRICS_COLUMNS = (
    "scenario", "room", "policy", "seed", "cumulative_q1_mbps", "cumulative_avg_mbps", "episodes",
)
EVAL_LOG_COLUMNS = ("policy", *EPISODE_LOG_COLUMNS)
ADAPT_SUMMARY_COLUMNS = (
    "room", "seed", "init", "episodes", "episodes_to_reach", "final_median_reward", "baseline_reward",
)
SCHEMAS = {
    "episode_log": EPISODE_LOG_COLUMNS,
    "eval_log": EVAL_LOG_COLUMNS,
    "metrics": METRICS_COLUMNS,
    "federation": FEDERATION_COLUMNS,
    "adapt_summary": ADAPT_SUMMARY_COLUMNS,
}


class OutputExistsError(FileExistsError):
    pass


@dataclass
class MetricsRow:
    scenario: str
    room: str
    policy: str
    seed: int
    cumulative_q1_mbps: float
    cumulative_avg_mbps: float
    episodes: int

    @classmethod
    def from_logs(cls, scenario, room, policy, seed, logs: list[EpisodeLog]) -> "MetricsRow":
        return cls(
            scenario, room, policy, seed,
            float(sum(l.mean_q1_mbps for l in logs)),
            float(sum(l.mean_rate_mbps for l in logs)),
            len(logs),
        )

    def row(self) -> list:
        return [getattr(self, c) for c in METRICS_COLUMNS]


class OutputDir:
    """Staging area that is moved into ``path`` on success and deleted on failure."""

    def __init__(self, path, force: bool = False):
        self.path = Path(path)
        if self.path.exists() and any(self.path.iterdir()) and not force:
            raise OutputExistsError(f"output directory {self.path} is not empty (use --force to overwrite)")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=f".{self.path.name}.partial-", dir=self.path.parent))

    def file(self, name: str) -> Path:
        return self.stage / name

    def csv_writer(self, name: str, schema: str):
        fh = open(self.file(name), "w", newline="")
        w = csv.writer(fh)
        w.writerow(SCHEMAS[schema])
        return fh, w

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.stage, ignore_errors=True)
            return False
        self.path.mkdir(parents=True, exist_ok=True)
        for item in self.stage.iterdir():
            dest = self.path / item.name
            if dest.is_dir():
                shutil.rmtree(dest)
            item.replace(dest)
        self.stage.rmdir()
        return False


def write_manifest(out: OutputDir, command: str, cfg: ExperimentConfig, extra: dict | None = None) -> None:
    doc = {
        "command": command,
        "schema_version": SCHEMA_VERSION,
        "schemas": {k: list(v) for k, v in SCHEMAS.items()},
        "config": cfg.to_dict(),
    }
    doc.update(extra or {})
    out.file("manifest.json").write_text(json.dumps(doc, indent=2, default=str))


def write_episode_csv(path: Path, logs: list[EpisodeLog], policy: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_LOG_COLUMNS if policy else EPISODE_LOG_COLUMNS)
        for l in logs:
            w.writerow(([policy] if policy else []) + l.row())


# ---------------------------------------------------------------------------
# building blocks

def make_env(cfg: ExperimentConfig, room: str, seed: int) -> PowerControlEnv:
    layout = cfg.layout(room)
    space = build_action_space(cfg.action_space.levels_dbm, layout.n_cells, cfg.action_space.mode)
    return PowerControlEnv(
        layout, cfg.radio, cfg.mobility, space,
        steps_per_episode=cfg.steps_per_episode,
        initial_power_dbm=cfg.initial_power_dbm,
        seed=seed,
    )


def eval_seed(seed: int) -> int:
    """Environment seed for evaluation rollouts, disjoint from training seeds."""
    return 1_000_003 + seed


def _room_tag(room: str) -> str:
    return Path(room).stem if room.endswith(".json") else room


def train_one(cfg: ExperimentConfig, room: str, seed: int):
    env = make_env(cfg, room, seed)
    agent = DqnAgent(env.state_dim, env.n_actions, cfg.dqn, seed=seed)
    logs = run_episodes(env, agent, cfg.episodes)
    return room, seed, logs, agent.online


def _map(cfg: ExperimentConfig, fn, jobs):
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(fn, *zip(*jobs)))
    return [fn(*job) for job in jobs]


# ---------------------------------------------------------------------------
# commands

def train(cfg: ExperimentConfig, out_dir, force: bool = False) -> list[Path]:
    """Independent single-room DQN training for every (room, seed)."""
    jobs = [(cfg, room, seed) for room in cfg.rooms for seed in cfg.seeds]
    written = []
    with OutputDir(out_dir, force) as out:
        write_manifest(out, "train", cfg)
        for room, seed, logs, params in _map(cfg, train_one, jobs):
            tag = f"{_room_tag(room)}_seed{seed}"
            write_episode_csv(out.file(f"train_{tag}.csv"), logs)
            save_checkpoint(out.file(f"rl_{tag}.ckpt"), params)
            written.append(out.path / f"rl_{tag}.ckpt")
    return written


def federate(cfg: ExperimentConfig, out_dir, force: bool = False) -> list[RoundRecord]:
    """FedAvg training over ``cfg.federation.rooms`` with the first configured seed."""
    seed = cfg.seeds[0]
    fed = cfg.federation
    envs = [make_env(cfg, room, seed * 1000 + k) for k, room in enumerate(fed.rooms)]
    agents = [DqnAgent(e.state_dim, e.n_actions, cfg.dqn, seed=seed * 1000 + k) for k, e in enumerate(envs)]
    with OutputDir(out_dir, force) as out:
        write_manifest(out, "federate", cfg, {"seed": seed})
        fed_fh, fed_w = out.csv_writer("federation.csv", "federation")
        client_files = [out.csv_writer(f"client_{_room_tag(r)}.csv", "episode_log") for r in fed.rooms]
        try:
            def on_round(rec: RoundRecord):
                fed_w.writerow(rec.row())
                fed_fh.flush()
                for (fh, w), logs in zip(client_files, rec.client_logs):
                    for l in logs:
                        w.writerow(l.row())
                    fh.flush()
                save_checkpoint(out.file(f"global_round_{rec.round}.ckpt"), rec.global_params)

            records = run_federation(fed, envs, agents, on_round=on_round)
        finally:
            fed_fh.close()
            for fh, _ in client_files:
                fh.close()
    return records


def _policy_for(cfg: ExperimentConfig, env: PowerControlEnv, room: str, seed: int, checkpoint):
    if cfg.policy in ("random", "exhaustive"):
        return BaselinePolicy(cfg.policy, cfg.objective, seed=seed)
    if checkpoint is None:
        raise ValueError(f"policy {cfg.policy!r} needs --checkpoint")
    path = Path(str(checkpoint).format(room=_room_tag(room), seed=seed))
    spec = NetworkSpec(env.state_dim, env.n_actions, cfg.dqn.hidden_dims)
    agent = DqnAgent(env.state_dim, env.n_actions, cfg.dqn, seed=seed, params=load_checkpoint(path, spec))
    return greedy_policy(agent)


def evaluate_one(cfg: ExperimentConfig, room: str, seed: int, checkpoint):
    env = make_env(cfg, room, eval_seed(seed))
    policy = _policy_for(cfg, env, room, seed, checkpoint)
    logs = evaluate_policy(env, policy, cfg.eval_episodes)
    return MetricsRow.from_logs(cfg.scenario, _room_tag(room), cfg.policy, seed, logs), logs


def evaluate(cfg: ExperimentConfig, out_dir, checkpoint=None, force: bool = False) -> list[MetricsRow]:
    """Frozen (epsilon = 0) rollouts of a checkpoint or baseline policy.

    ``checkpoint`` may contain ``{room}`` and ``{seed}`` placeholders.
    """
    jobs = [(cfg, room, seed, checkpoint) for room in cfg.rooms for seed in cfg.seeds]
    rows = []
    with OutputDir(out_dir, force) as out:
        write_manifest(out, "eval", cfg, {"checkpoint": str(checkpoint) if checkpoint else None})
        fh, w = out.csv_writer("metrics.csv", "metrics")
        with fh:
            for (row, logs), (_, room, seed, _) in zip(_map(cfg, evaluate_one, jobs), jobs):
                w.writerow(row.row())
                write_episode_csv(out.file(f"eval_{cfg.policy}_{_room_tag(room)}_seed{seed}.csv"), logs, cfg.policy)
                rows.append(row)
    return rows


def random_baseline_reward(cfg: ExperimentConfig, room: str, seed: int, episodes: int = 20) -> float:
    """Median episode reward of the uniform random policy; reference level for adaptation curves."""
    env = make_env(cfg, room, eval_seed(seed))
    logs = evaluate_policy(env, BaselinePolicy("random", seed=seed), episodes)
    return float(np.median([l.cumulative_reward for l in logs]))


def adapt_pair(cfg: ExperimentConfig, global_params, seed: int):
    """Pretrained and scratch twins in the adaptation room, same seeds otherwise."""
    acfg = cfg.adapt
    dqn = cfg.dqn if acfg.epsilon_start is None else dataclasses.replace(cfg.dqn, epsilon_start=acfg.epsilon_start)
    out = {}
    for init, params in (("pretrained", global_params), ("scratch", None)):
        env = make_env(cfg, acfg.room, seed)
        out[init] = adapt(params, env, dqn, acfg.episodes, seed=seed).logs
    return out


def adapt_experiment(cfg: ExperimentConfig, out_dir, checkpoint, force: bool = False) -> list[dict]:
    room = cfg.adapt.room
    probe = make_env(cfg, room, 0)
    spec = NetworkSpec(probe.state_dim, probe.n_actions, cfg.dqn.hidden_dims)
    global_params = load_checkpoint(checkpoint, spec)
    summary = []
    with OutputDir(out_dir, force) as out:
        write_manifest(out, "adapt", cfg, {"checkpoint": str(checkpoint)})
        fh, w = out.csv_writer("adapt_summary.csv", "adapt_summary")
        with fh:
            for seed in cfg.seeds:
                pair = adapt_pair(cfg, global_params, seed)
                base = random_baseline_reward(cfg, room, seed)
                for init, logs in pair.items():
                    write_episode_csv(out.file(f"adapt_{_room_tag(room)}_seed{seed}_{init}.csv"), logs)
                    curve = [l.cumulative_reward for l in logs]
                    reach = episodes_to_reach(curve, cfg.adapt.fraction, cfg.adapt.window, baseline=base)
                    final = float(np.median(curve[-cfg.adapt.window:])) if curve else float("nan")
                    rec = {"room": _room_tag(room), "seed": seed, "init": init, "episodes": len(logs),
                           "episodes_to_reach": reach, "final_median_reward": final, "baseline_reward": base}
                    w.writerow([rec[c] for c in ADAPT_SUMMARY_COLUMNS])
                    summary.append(rec)
    return summary
