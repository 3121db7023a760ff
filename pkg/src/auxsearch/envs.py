"""Point-mass reaching tasks and the observation-masking POMDP wrapper.

Physics constants are fixed here on purpose: changing them changes the task.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

DT = 0.05
ACCEL = 0.5
V_MAX = 1.0
BOUND = 1.0
INIT_RANGE = 0.9
EPISODE_LENGTH = 200
SPARSE_RADIUS = 0.1
MAX_DISTANCE = 2.0 * math.sqrt(2.0)
OBS_DIM = 6
ACTION_DIM = 2


class EnvConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PointMassState:
    position: tuple[float, float]
    velocity: tuple[float, float]
    goal: tuple[float, float]
    step_index: int = 0

    def observation(self) -> np.ndarray:
        return np.array([*self.position, *self.velocity, *self.goal])


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool


def point_mass_reset(seed) -> PointMassState:
    rng = np.random.default_rng(seed)
    p = rng.uniform(-INIT_RANGE, INIT_RANGE, size=2)
    g = rng.uniform(-INIT_RANGE, INIT_RANGE, size=2)
    return PointMassState((float(p[0]), float(p[1])), (0.0, 0.0), (float(g[0]), float(g[1])), 0)


def dense_reward(position, goal) -> float:
    return 1.0 - math.dist(position, goal) / MAX_DISTANCE


def sparse_reward(position, goal) -> float:
    return 1.0 if math.dist(position, goal) < SPARSE_RADIUS else 0.0


def _clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


def point_mass_step(state: PointMassState, action, sparse: bool = False) -> tuple[PointMassState, StepResult]:
    """Advance one step. The action is clamped to [-1, 1]^2; nothing is mutated."""
    ax = _clamp(float(action[0]), -1.0, 1.0)
    ay = _clamp(float(action[1]), -1.0, 1.0)
    vx = _clamp(state.velocity[0] + ACCEL * ax * DT, -V_MAX, V_MAX)
    vy = _clamp(state.velocity[1] + ACCEL * ay * DT, -V_MAX, V_MAX)
    px = _clamp(state.position[0] + vx * DT, -BOUND, BOUND)
    py = _clamp(state.position[1] + vy * DT, -BOUND, BOUND)
    nxt = PointMassState((px, py), (vx, vy), state.goal, state.step_index + 1)
    reward = (sparse_reward if sparse else dense_reward)(nxt.position, nxt.goal)
    return nxt, StepResult(nxt.observation(), reward, nxt.step_index >= EPISODE_LENGTH)


def pomdp_kept_indices(dim: int, fraction: float, seed) -> np.ndarray:
    """Indices that survive masking; ceil(fraction * dim) are dropped for good."""
    if not 0.0 <= fraction < 1.0:
        raise EnvConfigError(f"mask fraction must be in [0, 1), got {fraction}")
    n_drop = math.ceil(fraction * dim)
    dropped = np.random.default_rng(seed).choice(dim, size=n_drop, replace=False)
    return np.setdiff1d(np.arange(dim), dropped)


def pomdp_mask(observation, fraction: float = 0.2, seed=0) -> np.ndarray:
    obs = np.asarray(observation)
    return obs[..., pomdp_kept_indices(obs.shape[-1], fraction, seed)]


@dataclass(frozen=True)
class EnvSpec:
    """Parsed environment id: ``pointmass-{dense,sparse}[:pomdp:<fraction>:<seed>]``."""

    sparse: bool = False
    mask_fraction: float = 0.0
    mask_seed: int = 0

    @classmethod
    def parse(cls, env_id: str) -> EnvSpec:
        base, _, rest = env_id.partition(":")
        if base not in ("pointmass-dense", "pointmass-sparse"):
            raise EnvConfigError(f"unknown environment {env_id!r}")
        spec = cls(sparse=base == "pointmass-sparse")
        if rest:
            parts = rest.split(":")
            if len(parts) != 3 or parts[0] != "pomdp":
                raise EnvConfigError(f"bad environment suffix in {env_id!r}")
            try:
                spec = replace(spec, mask_fraction=float(parts[1]), mask_seed=int(parts[2]))
            except ValueError:
                raise EnvConfigError(f"bad pomdp parameters in {env_id!r}") from None
            pomdp_kept_indices(OBS_DIM, spec.mask_fraction, spec.mask_seed)
        return spec


class PointMassEnv:
    """Stateful convenience wrapper; all dynamics live in the pure functions."""

    action_dim = ACTION_DIM
    episode_length = EPISODE_LENGTH

    def __init__(self, env_id: str = "pointmass-dense"):
        self.env_id = env_id
        self.spec = EnvSpec.parse(env_id)
        self.kept = pomdp_kept_indices(OBS_DIM, self.spec.mask_fraction, self.spec.mask_seed)
        self.obs_dim = len(self.kept)
        self.state: PointMassState | None = None

    def _obs(self, full: np.ndarray) -> np.ndarray:
        return full[self.kept]

    def reset(self, seed) -> np.ndarray:
        self.state = point_mass_reset(seed)
        return self._obs(self.state.observation())

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self.state is None:
            raise RuntimeError("reset() before step()")
        self.state, res = point_mass_step(self.state, action, self.spec.sparse)
        return self._obs(res.observation), res.reward, res.done


def controller_action(state: PointMassState) -> np.ndarray:
    """Proportional-derivative reach: clamp(2 (g - p) - v)."""
    p, v, g = np.array(state.position), np.array(state.velocity), np.array(state.goal)
    return np.clip(2.0 * (g - p) - v, -1.0, 1.0)


def episode_seeds(seed: int, episodes: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(x) for x in ss.generate_state(episodes)]


def scripted_baseline_return(env_id: str = "pointmass-dense", episodes: int = 20, seed: int = 0,
                             policy: str = "controller") -> float:
    """Mean episodic return of the scripted controller (or a uniform random policy)."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    spec = EnvSpec.parse(env_id)
    rng = np.random.default_rng(seed)
    total = 0.0
    for ep_seed in episode_seeds(seed, episodes):
        state = point_mass_reset(ep_seed)
        for _ in range(EPISODE_LENGTH):
            if policy == "controller":
                act = controller_action(state)
            elif policy == "random":
                act = rng.uniform(-1.0, 1.0, size=2)
            else:
                raise ValueError(f"unknown policy {policy!r}")
            state, res = point_mass_step(state, act, spec.sparse)
            total += res.reward
    return total / episodes
