from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InsufficientData(RuntimeError):
    pass


@dataclass
class TransitionBatch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray  # (B, 1)
    next_obs: np.ndarray
    dones: np.ndarray  # (B, 1), 1.0 only for true terminals


@dataclass
class SegmentBatch:
    """A batch of windows ``(s, a, r)_{t..t+k}`` taken from single episodes."""

    states: np.ndarray  # (B, k+1, obs_dim)
    actions: np.ndarray  # (B, k+1, action_dim)
    rewards: np.ndarray  # (B, k+1)

    @property
    def horizon(self) -> int:
        return self.states.shape[1] - 1

    def __len__(self) -> int:
        return self.states.shape[0]


class ReplayBuffer:
    """FIFO ring buffer of transitions tagged with their episode id."""

    def __init__(self, obs_dim: int, action_dim: int, capacity: int = 100_000):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity)
        self.episodes = np.full(capacity, -1, dtype=np.int64)
        self.size = 0
        self._head = 0  # next write slot

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action, reward, next_obs, done, episode: int) -> None:
        i = self._head
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = float(done)
        self.episodes[i] = episode
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _physical(self, logical: np.ndarray) -> np.ndarray:
        oldest = (self._head - self.size) % self.capacity
        return (oldest + logical) % self.capacity

    def sample_transitions(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        if self.size == 0:
            raise InsufficientData("empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        idx = self._physical(idx)
        return TransitionBatch(
            self.obs[idx],
            self.actions[idx],
            self.rewards[idx, None],
            self.next_obs[idx],
            self.dones[idx, None],
        )

    def admissible_starts(self, k: int) -> np.ndarray:
        """Logical start indices whose k-step window stays inside one episode."""
        n = self.size - k
        if n <= 0:
            return np.zeros(0, dtype=np.int64)
        ep = self.episodes[self._physical(np.arange(self.size))]
        # episodes are written contiguously, so equal ends mean one episode
        return np.flatnonzero(ep[:n] == ep[k:])


def sample_segments(buffer: ReplayBuffer, k: int, batch_size: int,
                    rng: np.random.Generator) -> SegmentBatch:
    """Uniform draw over admissible window starts."""
    starts = buffer.admissible_starts(k)
    if len(starts) == 0:
        raise InsufficientData(f"no episode span of length {k + 1} in the buffer")
    chosen = starts[rng.integers(0, len(starts), size=batch_size)]
    idx = buffer._physical(chosen[:, None] + np.arange(k + 1)[None, :])
    return SegmentBatch(buffer.obs[idx], buffer.actions[idx], buffer.rewards[idx])
