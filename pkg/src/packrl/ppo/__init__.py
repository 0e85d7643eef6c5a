"""Proximal policy optimization written directly in numpy."""

from .algo import AdamState, Batch, ReturnScaler, TrainingDiverged, adam_step, clip_grad_norm, gae, lr_schedule, ppo_loss
from .nn import MLP
from .policy import ActorCritic
from .train import CheckpointError, build_policy, evaluate, load_checkpoint, save_checkpoint, train, train_cached

__all__ = [
    "MLP",
    "ActorCritic",
    "AdamState",
    "Batch",
    "ReturnScaler",
    "CheckpointError",
    "TrainingDiverged",
    "adam_step",
    "build_policy",
    "clip_grad_norm",
    "evaluate",
    "gae",
    "load_checkpoint",
    "lr_schedule",
    "ppo_loss",
    "save_checkpoint",
    "train",
    "train_cached",
]
