"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .planner import MODES, PlannerConfig

ENV_NAMES = ("pointmass", "pendulum")


@dataclass
class TrainConfig:
    env: str = "pointmass"
    mode: str = "dreamer"
    seed: int = 0
    total_steps: int = 50_000
    episode_length: int = 200
    action_repeat: int = 2
    seed_episodes: int = 5
    train_every: int = 1
    model_updates: int = 100
    behavior_updates: int = 100
    batch_size: int = 32
    seq_len: int = 32
    replay_capacity: int = 1_000_000
    deter: int = 64
    stoch: int = 16
    hidden: int = 64
    embed: int = 64
    beta: float = 1.0
    model_lr: float = 6e-4
    actor_lr: float = 8e-5
    critic_lr: float = 8e-5
    grad_clip: float = 100.0
    horizon: int = 15
    gamma: float = 0.99
    lam: float = 0.95
    simulations: int = 50
    proposal_candidates: int = 100
    uniform_candidates: int = 50
    rollout_depth: int = 10
    fixed_children: int = 20
    c1: float = 1.25
    c2: float = 19652.0
    c_pw: float = 1.0
    alpha: float = 0.5
    noise_std: float = 0.3
    eval_episodes: int = 10
    checkpoint_every: int = 0
    log_timing: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.env not in ENV_NAMES:
            raise ValueError(f"unknown env {self.env!r}; expected one of {ENV_NAMES}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        for name in ("total_steps", "episode_length", "action_repeat", "train_every",
                     "batch_size", "seq_len", "replay_capacity", "deter", "stoch",
                     "hidden", "embed", "horizon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("seed_episodes", "model_updates", "behavior_updates", "eval_episodes",
                     "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.seq_len > self.episode_length // self.action_repeat + 1:
            raise ValueError("seq_len exceeds the stored episode length")
        self.planner_config()

    def planner_config(self) -> PlannerConfig:
        names = set(PlannerConfig.field_names())
        return PlannerConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_text().encode()).digest()

    def with_overrides(self, **overrides) -> "TrainConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _convert(kind, raw: str):
    if kind in (bool, "bool"):
        lowered = raw.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind in (int, "int"):
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def parse_config(text: str) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        try:
            values[key] = _convert(types[key], raw)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key}: {exc}") from None
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent named child stream of the master seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])
