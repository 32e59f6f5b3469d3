"""Self-contained PPO learner (numpy, hand-written gradients)."""
from .buffer import RolloutBuffer, compute_advantages
from .loss import Batch, greedy_masked, masked_log_softmax, ppo_loss, sample_masked
from .network import MLP, PolicyParams, ShapeMismatch, policy_forward
from .trainer import (
    Adam,
    EvalResult,
    Trainer,
    TrainerConfig,
    TrainingDiverged,
    default_n_steps,
    evaluate,
    load_params,
    lr_at,
    ppo_update,
    train,
)

__all__ = [
    "Adam", "Batch", "EvalResult", "MLP", "PolicyParams", "RolloutBuffer", "ShapeMismatch", "Trainer",
    "TrainerConfig", "TrainingDiverged", "compute_advantages", "default_n_steps", "evaluate", "greedy_masked",
    "load_params", "lr_at", "masked_log_softmax", "policy_forward", "ppo_loss", "ppo_update", "sample_masked", "train",
]
