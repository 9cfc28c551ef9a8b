"""Episode replay storage with fixed-length window sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .worldmodel import SequenceBatch


@dataclass
class Episode:
    """Index 0 holds the reset observation with a zero action and zero reward."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return len(self.obs)

    @property
    def transitions(self) -> int:
        return len(self.obs) - 1

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    @classmethod
    def from_transitions(cls, transitions, action_dim: int) -> "Episode":
        obs = [transitions[0].obs] + [t.next_obs for t in transitions]
        actions = [np.zeros(action_dim)] + [t.action for t in transitions]
        rewards = [0.0] + [t.reward for t in transitions]
        return cls(np.array(obs), np.array(actions), np.array(rewards))


class ReplayBuffer:
    def __init__(self, capacity: int = 1_000_000):
        self.capacity = capacity
        self.episodes: list[Episode] = []

    @property
    def steps(self) -> int:
        return sum(len(e) for e in self.episodes)

    def add(self, episode: Episode) -> None:
        self.episodes.append(episode)
        while self.steps > self.capacity and len(self.episodes) > 1:
            self.episodes.pop(0)

    def sample_windows(self, batch: int, length: int, rng: np.random.Generator) -> list[tuple[int, int]]:
        """(episode index, start) pairs; every window lies inside one episode."""
        eligible = [i for i, e in enumerate(self.episodes) if len(e) >= length]
        if not eligible or length <= 0:
            raise ValueError(f"no stored episode holds a window of length {length}")
        out = []
        for _ in range(batch):
            i = eligible[int(rng.integers(len(eligible)))]
            start = int(rng.integers(len(self.episodes[i]) - length + 1))
            out.append((i, start))
        return out

    def sample(self, batch: int, length: int, rng: np.random.Generator) -> SequenceBatch:
        windows = self.sample_windows(batch, length, rng)
        eps = self.episodes
        return SequenceBatch(
            np.stack([eps[i].obs[s:s + length] for i, s in windows]),
            np.stack([eps[i].actions[s:s + length] for i, s in windows]),
            np.stack([eps[i].rewards[s:s + length] for i, s in windows]),
        )
