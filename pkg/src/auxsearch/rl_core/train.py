"""The inner loop: SAC with a shared dense encoder and an optional auxiliary loss."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .. import autodiff as ad
from ..autodiff import ParameterSet, Tensor, adam_step
from ..envs import ACTION_DIM, EPISODE_LENGTH, PointMassEnv, episode_seeds, point_mass_reset, point_mass_step
from ..loss_dsl import LossCandidate, validate
from .losses import AgentNets, actor_loss, aux_loss, critic_loss, critic_target, make_aux_head, temperature_loss
from .networks import Actor, Critic, DenseMLPEncoder, copy_params, ema_update
from .replay import ReplayBuffer, sample_segments

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RLConfig:
    latent_dim: int = 16
    hidden_dim: int = 64
    predictor_hidden: int = 32
    batch_size: int = 128
    aux_batch_size: int = 128
    lr: float = 1e-3
    alpha_lr: float = 1e-4
    alpha_beta1: float = 0.5
    init_temperature: float = 0.1
    gamma: float = 0.99
    tau_encoder: float = 0.05
    tau_critic: float = 0.01
    critic_target_update_freq: int = 2
    warmup_steps: int = 1000
    eval_episodes: int = 10
    n_checkpoints: int = 5
    buffer_capacity: int = 100_000
    aux_weight: float = 1.0

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class LearningCurve:
    checkpoints: list[tuple[int, float]]
    seed: int
    wall_time: float = 0.0

    def __post_init__(self):
        steps = [s for s, _ in self.checkpoints]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError(f"checkpoint steps must increase strictly: {steps}")

    @property
    def scores(self) -> list[float]:
        return [v for _, v in self.checkpoints]


def checkpoint_steps(budget: int, n: int) -> list[int]:
    if budget <= 0:
        return [0]
    return sorted({math.ceil(budget * i / n) for i in range(1, n + 1)})


class Agent:
    def __init__(self, obs_dim: int, action_dim: int, config: RLConfig, rng: np.random.Generator,
                 candidate: LossCandidate | None = None):
        c = config
        self.config = c
        encoder = DenseMLPEncoder(obs_dim, c.latent_dim, rng)
        target_encoder = DenseMLPEncoder(obs_dim, c.latent_dim, rng)
        copy_params(target_encoder.params, encoder.params)
        critic = Critic(c.latent_dim, action_dim, c.hidden_dim, rng)
        critic_tgt = Critic(c.latent_dim, action_dim, c.hidden_dim, rng)
        copy_params(critic_tgt.params, critic.params)
        actor = Actor(c.latent_dim, action_dim, c.hidden_dim, rng)
        log_alpha = Tensor(np.log(c.init_temperature), requires_grad=True)
        aux = None
        if candidate is not None:
            aux = make_aux_head(candidate, c.latent_dim, action_dim, c.predictor_hidden, rng)
        self.nets = AgentNets(encoder, target_encoder, actor, critic, critic_tgt, log_alpha,
                              gamma=c.gamma, target_entropy=-float(action_dim), aux=aux)
        self.alpha_params = ParameterSet({"log_alpha": log_alpha})
        # encoder, critic and aux head share one backward pass
        self.joint: dict[str, Tensor] = {}
        for prefix, ps in self._joint_sets():
            self.joint.update({prefix + k: t for k, t in ps.items()})
        self.updates = 0

    def _joint_sets(self):
        sets = [("enc.", self.nets.encoder.params), ("critic.", self.nets.critic.params)]
        if self.nets.aux is not None:
            sets.append(("aux.", self.nets.aux.params))
        return sets

    def sample_action(self, obs: np.ndarray, noise: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            action, _ = self.nets.actor.sample(self.nets.encoder(obs[None, :]), noise[None, :])
        return action.data[0]

    def greedy_actions(self, obs: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self.nets.actor.mean_action(self.nets.encoder(obs))

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> dict[str, float]:
        c, nets = self.config, self.nets
        a_dim = nets.actor.action_dim
        batch = buffer.sample_transitions(c.batch_size, rng)
        target = critic_target(nets, batch, rng.standard_normal((c.batch_size, a_dim)))
        loss = critic_loss(nets, batch, target)
        info = {"critic": loss.item()}
        if nets.aux is not None:
            segments = sample_segments(buffer, nets.aux.candidate.horizon, c.aux_batch_size, rng)
            la = aux_loss(nets.aux, segments, nets.encoder, nets.target_encoder)
            info["aux"] = la.item()
            loss = loss + la * c.aux_weight
        grads = ad.backward(loss, self.joint)
        for prefix, ps in self._joint_sets():
            adam_step(ps, {k: grads[prefix + k] for k in ps}, c.lr)

        a_loss, logp = actor_loss(nets, batch.obs, rng.standard_normal((c.batch_size, a_dim)))
        adam_step(nets.actor.params, nets.actor.params.backward(a_loss), c.lr)
        t_loss = temperature_loss(nets, logp)
        adam_step(self.alpha_params, self.alpha_params.backward(t_loss), c.alpha_lr, beta1=c.alpha_beta1)
        info["actor"] = a_loss.item()

        self.updates += 1
        ema_update(nets.target_encoder.params, nets.encoder.params, c.tau_encoder)
        if self.updates % c.critic_target_update_freq == 0:
            ema_update(nets.critic_target.params, nets.critic.params, c.tau_critic)
        return info


def evaluate_policy(agent: Agent, env: PointMassEnv, seeds: list[int]) -> float:
    """Mean return of the greedy policy, all episodes stepped in lock-step."""
    states = [point_mass_reset(sd) for sd in seeds]
    total = 0.0
    for _ in range(EPISODE_LENGTH):
        obs = np.stack([st.observation()[env.kept] for st in states])
        actions = agent.greedy_actions(obs)
        for i, st in enumerate(states):
            states[i], res = point_mass_step(st, actions[i], env.spec.sparse)
            total += res.reward
    return total / len(seeds)


def train_run(candidate: LossCandidate | None, env_id: str, budget: int, seed: int,
              config: RLConfig | None = None) -> LearningCurve:
    """Train from scratch for ``warmup + budget`` env steps; one update per post-warmup step.

    ``candidate=None`` trains plain SAC. Fully determined by ``seed``.
    """
    config = config or RLConfig()
    if candidate is not None and not validate(candidate):
        raise ValueError(f"invalid candidate {candidate}: {validate(candidate).value}")
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    env = PointMassEnv(env_id)
    start = time.perf_counter()

    init_ss, explore_ss, update_ss, eval_ss = np.random.SeedSequence(seed).spawn(4)
    agent = Agent(env.obs_dim, ACTION_DIM, config, np.random.default_rng(init_ss), candidate)
    explore = np.random.default_rng(explore_ss)
    update_rng = np.random.default_rng(update_ss)
    eval_seeds = episode_seeds(int(eval_ss.generate_state(1)[0]), config.eval_episodes)
    buffer = ReplayBuffer(env.obs_dim, ACTION_DIM, config.buffer_capacity)

    marks = checkpoint_steps(budget, config.n_checkpoints)
    curve: list[tuple[int, float]] = []
    if budget == 0:
        curve.append((0, evaluate_policy(agent, env, eval_seeds)))

    episode = 0
    obs = env.reset(int(explore.integers(2**63)))
    for t in range(config.warmup_steps + budget):
        if t < config.warmup_steps:
            action = explore.uniform(-1.0, 1.0, size=ACTION_DIM)
        else:
            action = agent.sample_action(obs, explore.standard_normal(ACTION_DIM))
        next_obs, reward, done = env.step(action)
        # episodes end by time limit only, so nothing is a true terminal
        buffer.add(obs, action, reward, next_obs, False, episode)
        obs = next_obs
        if done:
            episode += 1
            obs = env.reset(int(explore.integers(2**63)))
        if t >= config.warmup_steps:
            agent.update(buffer, update_rng)
            learned = t - config.warmup_steps + 1
            if learned in marks:
                score = evaluate_policy(agent, env, eval_seeds)
                curve.append((learned, score))
                logger.debug("seed %d step %d eval %.3f", seed, learned, score)
    return LearningCurve(curve, seed, time.perf_counter() - start)
