"""Non-learning comparators: uniform random power and per-step exhaustive search."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import ActionSpace, Measurement, PowerControlEnv
from .radio import LinkGeometry

OBJECTIVES = ("sum_rate", "q1")
POLICY_KINDS = ("random", "exhaustive")


def objective_value(m: Measurement, objective: str = "sum_rate") -> float:
    if objective == "sum_rate":
        return m.sum_mbps
    if objective == "q1":
        return m.q1_mbps
    raise ValueError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")


def random_action(space: ActionSpace, rng: np.random.Generator) -> int:
    if len(space) == 0:
        raise ValueError("empty action space")
    return int(rng.integers(len(space)))


def score_actions(env: PowerControlEnv, objective: str = "sum_rate", positions=None) -> np.ndarray:
    """Objective value of every action at the upcoming step's UE positions.

    Only reads from ``env``; each candidate is re-attached independently.
    """
    pos = env.next_positions if positions is None else positions
    geo = LinkGeometry(pos, env.layout, env.radio)
    return np.array([
        objective_value(env.measure(combo, pos, geo), objective) for combo in env.space.combos
    ])


def exhaustive_action(env: PowerControlEnv, space: ActionSpace | None = None, objective: str = "sum_rate") -> int:
    """Best action for the next step by brute force; ties go to the lowest index."""
    if space is not None and space != env.space:
        raise ValueError("exhaustive search must use the environment's action space")
    return int(np.argmax(score_actions(env, objective)))


@dataclass
class BaselinePolicy:
    kind: str = "random"
    objective: str = "sum_rate"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown baseline {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        self.rng = np.random.default_rng(self.seed)

    def __call__(self, env: PowerControlEnv, state) -> int:
        if self.kind == "random":
            return random_action(env.space, self.rng)
        return exhaustive_action(env, objective=self.objective)
