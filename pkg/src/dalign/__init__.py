"""Domain-alignment layers for unsupervised domain adaptation, in plain numpy."""
from .dal import DaLayerState, MixedStats, Mode, compute_mixed_statistics, da_backward, da_forward, freeze
from .losses import LossConfig, combined_loss, source_log_loss, target_entropy_loss
from .net import Network, OptimizerState, Schedule, build_mlp, sgd_step

__version__ = "0.1.0"

__all__ = [
    "DaLayerState",
    "LossConfig",
    "MixedStats",
    "Mode",
    "Network",
    "OptimizerState",
    "Schedule",
    "build_mlp",
    "combined_loss",
    "compute_mixed_statistics",
    "da_backward",
    "da_forward",
    "freeze",
    "sgd_step",
    "source_log_loss",
    "target_entropy_loss",
]
