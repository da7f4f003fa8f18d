"""Experiment configuration: one JSON document, defaults reproduce the reference setup."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..agent import DqnConfig
from ..env import ACTION_MODES, DEFAULT_LEVELS_DBM
from ..federation import FederationConfig
from ..geometry import LayoutError, MobilityConfig, load_layout
from ..radio import RadioParams
from ..baselines import OBJECTIVES

POLICIES = ("rl", "frl", "random", "exhaustive")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = source or "<config>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class ActionSpaceConfig:
    levels_dbm: tuple[float, ...] = DEFAULT_LEVELS_DBM
    mode: str = "dedup_keep_max"

    def __post_init__(self):
        object.__setattr__(self, "levels_dbm", tuple(float(v) for v in self.levels_dbm))
        if not self.levels_dbm:
            raise ValueError("levels_dbm must be non-empty")
        if any(b <= a for a, b in zip(self.levels_dbm, self.levels_dbm[1:])):
            raise ValueError("levels_dbm must be strictly increasing")
        if self.mode not in ACTION_MODES:
            raise ValueError(f"mode must be one of {ACTION_MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class AdaptConfig:
    room: str = "E"
    episodes: int = 300
    # None keeps the DQN schedule's starting epsilon
    epsilon_start: float | None = None
    fraction: float = 0.8
    window: int = 10

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if self.epsilon_start is not None and not 0 <= self.epsilon_start <= 1:
            raise ValueError("epsilon_start must be in [0, 1]")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must be in (0, 1]")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "default"
    rooms: tuple[str, ...] = ("A", "B", "C", "D")
    radio: RadioParams = RadioParams()
    mobility: MobilityConfig = MobilityConfig()
    action_space: ActionSpaceConfig = ActionSpaceConfig()
    steps_per_episode: int = 100
    initial_power_dbm: float = 24.0
    dqn: DqnConfig = DqnConfig()
    federation: FederationConfig = FederationConfig()
    adapt: AdaptConfig = AdaptConfig()
    policy: str = "rl"
    objective: str = "sum_rate"
    episodes: int = 2000
    eval_episodes: int = 50
    seeds: tuple[int, ...] = (0,)
    workers: int = 1
    output_dir: str | None = None
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "rooms", tuple(str(r) for r in self.rooms))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if not self.rooms:
            raise ValueError("rooms must be non-empty")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        for name in ("episodes", "eval_episodes"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.steps_per_episode < 1:
            raise ValueError("steps_per_episode must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.initial_power_dbm not in self.action_space.levels_dbm:
            raise ValueError(f"initial_power_dbm {self.initial_power_dbm} is not one of levels_dbm")

    def room_source(self, room: str):
        path = Path(room)
        if path.suffix == ".json" and not path.is_absolute():
            path = self.base_dir / path
            return path
        return room

    def layout(self, room: str):
        return load_layout(self.room_source(room))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seeds=(seed,))

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out.pop("base_dir")
        return out


_SECTIONS = {
    "radio": RadioParams,
    "mobility": MobilityConfig,
    "action_space": ActionSpaceConfig,
    "dqn": DqnConfig,
    "federation": FederationConfig,
    "adapt": AdaptConfig,
}


def _line_of(text: str, path: list[str]) -> int | None:
    """Best-effort line number of a (nested) key in the raw JSON text."""
    pos = 0
    found = None
    for key in path:
        idx = text.find(f'"{key}"', pos)
        if idx < 0:
            break
        found, pos = idx, idx + 1
    if found is None:
        return None
    return text.count("\n", 0, found) + 1


def _build(cls, data: Any, path: list[str], text: str, source: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {'.'.join(path)!r} must be an object", _line_of(text, path), source)
    names = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key {'.'.join(path + [key])!r}", _line_of(text, path + [key]), source)
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS and cls is ExperimentConfig:
            kwargs[key] = _build(_SECTIONS[key], value, path + [key], text, source)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        # point at the first key mentioned in the message, else the section
        bad = next((k for k in data if k in str(exc)), None)
        line = _line_of(text, path + [bad]) if bad else _line_of(text, path) if path else None
        label = ".".join(path) or "config"
        raise ConfigError(f"invalid {label}: {exc}", line, source) from None


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg} (column {exc.colno})", exc.lineno, source) from None
    cfg = _build(ExperimentConfig, doc, [], text, source)
    cfg = dataclasses.replace(cfg, base_dir=base_dir or Path("."))
    rooms = list(cfg.rooms) + list(cfg.federation.rooms) + [cfg.adapt.room]
    for room in dict.fromkeys(rooms):
        try:
            cfg.layout(room)
        except LayoutError as exc:
            raise ConfigError(f"room {room!r}: {exc}", _line_of(text, [room]), source) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, str(path), path.parent)
