"""Two-stage attentive super-resolution network on a small numpy autodiff engine."""

from .analysis import analyze
from .estimator import TSANSuperResolver
from .model import TSAN, VARIANTS, ModelConfig, build_variant, joint_loss
from .nn import count_flops, count_params
from .trainer import Checkpoint, TrainConfig, Trainer, load_checkpoint, save_checkpoint, train

__all__ = [
    "TSAN", "VARIANTS", "ModelConfig", "build_variant", "joint_loss",
    "count_params", "count_flops", "analyze",
    "Checkpoint", "TrainConfig", "Trainer", "load_checkpoint", "save_checkpoint", "train",
    "TSANSuperResolver",
]
