"""Power-control MDP: action space, state encoding, Q1 reward and stepping."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .geometry import MobilityConfig, RoomLayout, generate_trajectories, stack_trajectories
from .radio import LinkGeometry, LinkState, RadioParams, serving_cells, ue_rates

DEFAULT_LEVELS_DBM = (19.5, 21.0, 22.5, 24.0)
MAX_CQI = 15
ACTION_MODES = ("full", "dedup_keep_max")

TRACE_COLUMNS_FIXED = ("step", "action")
TRACE_COLUMNS_TAIL = ("q1_mbps", "mean_mbps", "reward")


class EpisodeDone(RuntimeError):
    """Raised when stepping an environment whose episode has ended."""


@dataclass(frozen=True)
class ActionSpace:
    levels_dbm: tuple[float, ...]
    combos: tuple[tuple[float, ...], ...]
    mode: str

    def __len__(self) -> int:
        return len(self.combos)

    @property
    def n_cells(self) -> int:
        return len(self.combos[0])

    def powers(self, action: int) -> np.ndarray:
        if not 0 <= action < len(self.combos):
            raise IndexError(f"action {action} outside action space of size {len(self.combos)}")
        return np.array(self.combos[action])

    def index_of(self, powers) -> int:
        return self.combos.index(tuple(float(p) for p in powers))


def build_action_space(levels, n_cells: int, mode: str = "dedup_keep_max") -> ActionSpace:
    """Enumerate per-cell power vectors.

    ``dedup_keep_max`` keeps one vector per class of equal pairwise dB
    differences (same interference proportions), the one with the largest
    total power. Order follows the Cartesian product order.
    """
    levels = tuple(float(v) for v in levels)
    if not levels:
        raise ValueError("levels must be non-empty")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be strictly increasing, got {levels}")
    if n_cells < 1:
        raise ValueError(f"n_cells must be >= 1, got {n_cells}")
    if mode not in ACTION_MODES:
        raise ValueError(f"unknown action-space mode {mode!r}; expected one of {ACTION_MODES}")
    full = list(itertools.product(levels, repeat=n_cells))
    if mode == "full":
        return ActionSpace(levels, tuple(full), mode)

    best: dict[tuple, int] = {}
    for i, combo in enumerate(full):
        key = tuple(round(combo[a] - combo[b], 9) for a, b in itertools.combinations(range(n_cells), 2))
        if key not in best or sum(combo) > sum(full[best[key]]):
            best[key] = i
    keep = sorted(best.values())
    return ActionSpace(levels, tuple(full[i] for i in keep), mode)


def q1_throughput(rates_bps) -> float:
    """0.25 quantile of per-UE rates in Mbps (linear interpolation)."""
    rates = np.asarray(rates_bps, dtype=float)
    if rates.size == 0:
        raise ValueError("q1_throughput needs at least one rate")
    return float(np.quantile(rates, 0.25, method="linear")) / 1e6


def encode_state(powers_dbm, links: LinkState, attach: np.ndarray, space: ActionSpace) -> np.ndarray:
    """Flat state: normalised powers, attached-UE shares, CQIs (cell-major)."""
    lo, hi = min(space.levels_dbm), max(space.levels_dbm)
    p = np.asarray(powers_dbm, dtype=float)
    norm_p = np.ones_like(p) if hi == lo else (p - lo) / (hi - lo)
    m, n = links.cqi.shape
    counts = np.bincount(attach, minlength=m) / n
    cqi = links.cqi.reshape(-1) / MAX_CQI
    return np.concatenate([norm_p, counts, cqi])


def state_dim(n_cells: int, n_ues: int) -> int:
    return 2 * n_cells + n_cells * n_ues


@dataclass
class StepOutcome:
    state: np.ndarray
    reward: float
    per_ue_rates: np.ndarray
    q1: float
    mean_rate: float
    done: bool
    powers_dbm: np.ndarray = field(default=None, repr=False)
    action: int = -1


@dataclass
class Measurement:
    """Result of scoring one power vector at one set of UE positions."""

    powers_dbm: np.ndarray
    links: LinkState
    attach: np.ndarray
    rates_bps: np.ndarray

    @cached_property
    def q1_mbps(self) -> float:
        return q1_throughput(self.rates_bps)

    @cached_property
    def mean_mbps(self) -> float:
        return float(self.rates_bps.mean()) / 1e6

    @property
    def sum_mbps(self) -> float:
        return float(self.rates_bps.sum()) / 1e6


class PowerControlEnv:
    """One room, M cells, N moving UEs, episodic power control.

    Each step applies the chosen power vector, advances all UEs one
    trajectory step, re-attaches every UE to its strongest cell, then
    measures. The reward is the change in Q1 relative to the previous
    step (or to the initial setting on the first step).

    ``static_positions`` pins UEs to fixed (N, 3) positions for contrived
    scenarios; mobility is then ignored apart from ``n_ues``.
    """

    def __init__(
        self,
        layout: RoomLayout,
        radio: RadioParams = RadioParams(),
        mobility: MobilityConfig = MobilityConfig(),
        space: ActionSpace | None = None,
        steps_per_episode: int = 100,
        initial_power_dbm: float = 24.0,
        seed: int = 0,
        static_positions=None,
    ):
        self.layout = layout
        self.radio = radio
        self.mobility = mobility
        self.space = space or build_action_space(DEFAULT_LEVELS_DBM, layout.n_cells)
        if self.space.n_cells != layout.n_cells:
            raise ValueError(f"action space is for {self.space.n_cells} cells, room {layout.name} has {layout.n_cells}")
        if initial_power_dbm not in self.space.levels_dbm:
            raise ValueError(f"initial power {initial_power_dbm} dBm is not an allowed level {self.space.levels_dbm}")
        if steps_per_episode < 1:
            raise ValueError("steps_per_episode must be >= 1")
        self.T = steps_per_episode
        self.initial_power_dbm = initial_power_dbm
        self.static_positions = None if static_positions is None else np.asarray(static_positions, dtype=float)
        self.n_ues = mobility.n_ues if self.static_positions is None else len(self.static_positions)
        self._seed_rng = np.random.default_rng(seed)
        self._positions: np.ndarray | None = None
        self.t = 0
        self.done = True
        self.trace: list[dict] = []

    @property
    def state_dim(self) -> int:
        return state_dim(self.layout.n_cells, self.n_ues)

    @property
    def n_actions(self) -> int:
        return len(self.space)

    # -- pure scoring -------------------------------------------------------

    def measure(self, powers_dbm, positions: np.ndarray, geometry: LinkGeometry | None = None) -> Measurement:
        geo = geometry or LinkGeometry(positions, self.layout, self.radio)
        links = geo.links(powers_dbm)
        attach = serving_cells(links.rsrp_dbm)
        return Measurement(np.asarray(powers_dbm, dtype=float), links, attach, ue_rates(links, attach))

    def positions_at(self, t: int) -> np.ndarray:
        if self._positions is None:
            raise EpisodeDone("environment has not been reset")
        return self._positions[t]

    @property
    def current_positions(self) -> np.ndarray:
        return self.positions_at(self.t)

    @property
    def next_positions(self) -> np.ndarray:
        """UE positions the upcoming step will be measured at."""
        return self.positions_at(min(self.t + 1, self.T))

    # -- episode control ----------------------------------------------------

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is None:
            seed = int(self._seed_rng.integers(2**31 - 1))
        if self.static_positions is not None:
            self._positions = np.broadcast_to(self.static_positions, (self.T + 1,) + self.static_positions.shape)
        else:
            cfg = MobilityConfig(
                n_ues=self.mobility.n_ues,
                speed=self.mobility.speed,
                offset_sigma=self.mobility.offset_sigma,
                ue_height=self.mobility.ue_height,
                seed=seed,
            )
            self._positions = stack_trajectories(generate_trajectories(self.layout, cfg, self.T + 1))
        self.t = 0
        self.done = False
        self.powers = np.full(self.layout.n_cells, self.initial_power_dbm)
        self.last = self.measure(self.powers, self._positions[0])
        self.initial_q1 = self.last.q1_mbps
        self.trace = []
        self.state = encode_state(self.powers, self.last.links, self.last.attach, self.space)
        return self.state

    def step(self, action: int) -> StepOutcome:
        if self.done:
            raise EpisodeDone("episode is over; call reset()")
        powers = self.space.powers(int(action))
        self.t += 1
        now = self.measure(powers, self._positions[self.t])
        reward = now.q1_mbps - self.last.q1_mbps
        self.powers = powers
        self.last = now
        self.done = self.t >= self.T
        self.state = encode_state(powers, now.links, now.attach, self.space)
        self.trace.append(
            {"step": self.t, "action": int(action), "powers": powers.tolist(),
             "q1_mbps": now.q1_mbps, "mean_mbps": now.mean_mbps, "reward": reward}
        )
        return StepOutcome(
            state=self.state,
            reward=reward,
            per_ue_rates=now.rates_bps,
            q1=now.q1_mbps,
            mean_rate=now.mean_mbps,
            done=self.done,
            powers_dbm=powers,
            action=int(action),
        )


def trace_columns(n_cells: int) -> list[str]:
    return [*TRACE_COLUMNS_FIXED, *(f"power_dbm_{m}" for m in range(n_cells)), *TRACE_COLUMNS_TAIL]


def write_trace_csv(path, trace: list[dict], n_cells: int) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace_columns(n_cells))
        for row in trace:
            w.writerow([row["step"], row["action"], *row["powers"], row["q1_mbps"], row["mean_mbps"], row["reward"]])
