"""SAC losses and the auxiliary loss computed from a candidate genome."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import ParameterSet, Tensor
from ..loss_dsl import ElementKind, LossCandidate, element_count
from ..operators import TRAINING_EPS, LossBatch, OperatorParams, operator_loss
from .networks import MLP, Actor, Critic, DenseMLPEncoder
from .replay import SegmentBatch, TransitionBatch


@dataclass
class AgentNets:
    encoder: DenseMLPEncoder
    target_encoder: DenseMLPEncoder
    actor: Actor
    critic: Critic
    critic_target: Critic
    log_alpha: Tensor
    gamma: float = 0.99
    target_entropy: float = -2.0
    aux: AuxHead | None = None

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data[0, 0]))


@dataclass
class AuxHead:
    """Per-candidate predictor ``h`` and operator parameters."""

    candidate: LossCandidate
    predictor: MLP
    op_params: OperatorParams
    params: ParameterSet = field(default_factory=ParameterSet)

    def __post_init__(self):
        if not len(self.params):
            self.params.update(self.predictor.params, "h.")
            for name, t in self.op_params.tensors().items():
                self.params.add("op." + name, t)


def sequence_dim(mask, latent_dim: int, action_dim: int) -> int:
    return (element_count(mask, ElementKind.STATE) * latent_dim
            + element_count(mask, ElementKind.ACTION) * action_dim
            + element_count(mask, ElementKind.REWARD))


def make_aux_head(candidate: LossCandidate, latent_dim: int, action_dim: int, hidden: int,
                  rng: np.random.Generator) -> AuxHead:
    src_dim = sequence_dim(candidate.masks.source, latent_dim, action_dim)
    tgt_dim = sequence_dim(candidate.masks.target, latent_dim, action_dim)
    predictor = MLP([src_dim, hidden, tgt_dim], rng)
    return AuxHead(candidate, predictor, OperatorParams.for_spec(candidate.operator, tgt_dim))


def encode_sequence(mask, segments: SegmentBatch, encoder: DenseMLPEncoder,
                    use_target_encoder: bool = False) -> Tensor:
    """Concatenate, in bit order, g(s) for selected states and raw a, r.

    With ``use_target_encoder`` the encoder output is cut from the graph.
    """
    k = segments.horizon
    assert len(mask) == 3 * k + 3, f"mask length {len(mask)} for horizon {k}"
    parts = []
    for bit, on in enumerate(mask):
        if not on:
            continue
        j, kind = divmod(bit, 3)
        if kind == ElementKind.STATE:
            if use_target_encoder:
                with ad.no_grad():
                    z = ad.stop_gradient(encoder(segments.states[:, j]))
            else:
                z = encoder(segments.states[:, j])
            parts.append(z)
        elif kind == ElementKind.ACTION:
            parts.append(Tensor(segments.actions[:, j]))
        else:
            parts.append(Tensor(segments.rewards[:, j:j + 1]))
    return ad.concat(parts)


def aux_loss(head: AuxHead, segments: SegmentBatch, encoder: DenseMLPEncoder,
             target_encoder: DenseMLPEncoder) -> Tensor:
    masks = head.candidate.masks
    y = head.predictor(encode_sequence(masks.source, segments, encoder))
    y_hat = encode_sequence(masks.target, segments, target_encoder, use_target_encoder=True)
    return operator_loss(head.candidate.operator, LossBatch(y, y_hat), head.op_params, eps=TRAINING_EPS)


def critic_target(nets: AgentNets, batch: TransitionBatch, noise: np.ndarray) -> np.ndarray:
    """Soft Bellman target r + gamma (1 - done) (min Q_hat(s', a') - alpha log pi(a'|s'))."""
    with ad.no_grad():
        next_action, next_logp = nets.actor.sample(nets.encoder(batch.next_obs), noise)
        tq1, tq2 = nets.critic_target(nets.target_encoder(batch.next_obs), next_action)
        soft_v = np.minimum(tq1.data, tq2.data) - nets.alpha * next_logp.data
    return batch.rewards + nets.gamma * (1.0 - batch.dones) * soft_v


def critic_loss(nets: AgentNets, batch: TransitionBatch, target: np.ndarray) -> Tensor:
    features = nets.encoder(batch.obs)
    q1, q2 = nets.critic(features, batch.actions)
    y = Tensor(target)
    return ad.mean(ad.square(q1 - y)) + ad.mean(ad.square(q2 - y))


def actor_loss(nets: AgentNets, obs, noise: np.ndarray, critic=None) -> tuple[Tensor, np.ndarray]:
    """E[alpha log pi(a|s) - min_i Q_i(s, a)] on detached encoder features.

    Returns the loss and the (detached) log-densities for the temperature step.
    """
    critic = nets.critic if critic is None else critic
    with ad.no_grad():
        features = nets.encoder(obs)
    action, logp = nets.actor.sample(features, noise)
    q1, q2 = critic(features, action)
    loss = ad.mean(logp * nets.alpha - ad.minimum(q1, q2))
    return loss, logp.data.copy()


def temperature_loss(nets: AgentNets, log_pi: np.ndarray) -> Tensor:
    """E[-alpha (log pi + H_target)] with ``alpha = exp(log_alpha)``."""
    return ad.mean(ad.exp(nets.log_alpha) * Tensor(-(log_pi + nets.target_entropy)))
