"""Inner RL loop: replay, networks, SAC and auxiliary losses, training runs."""

from .losses import (AgentNets, AuxHead, actor_loss, aux_loss, critic_loss, critic_target,
                     encode_sequence, make_aux_head, sequence_dim, temperature_loss)
from .networks import MLP, Actor, Critic, DenseMLPEncoder, copy_params, ema_update
from .replay import InsufficientData, ReplayBuffer, SegmentBatch, TransitionBatch, sample_segments
from .train import Agent, LearningCurve, RLConfig, checkpoint_steps, evaluate_policy, train_run

__all__ = [
    "AgentNets", "AuxHead", "actor_loss", "aux_loss", "critic_loss", "critic_target",
    "encode_sequence", "make_aux_head", "sequence_dim", "temperature_loss",
    "MLP", "Actor", "Critic", "DenseMLPEncoder", "copy_params", "ema_update",
    "InsufficientData", "ReplayBuffer", "SegmentBatch", "TransitionBatch", "sample_segments",
    "Agent", "LearningCurve", "RLConfig", "checkpoint_steps", "evaluate_policy", "train_run",
]
