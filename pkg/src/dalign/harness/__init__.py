"""Experiment harness: configs, the ablation runner, exports and model files."""
from .config import ExperimentConfig, Variant, load_config
from .experiment import RunReport, grid_search_lambda, run_experiment, train_seed
from .export import export_alpha_trace, export_histograms
from .serialize import load_model, save_model

__all__ = [
    "ExperimentConfig",
    "RunReport",
    "Variant",
    "export_alpha_trace",
    "export_histograms",
    "grid_search_lambda",
    "load_config",
    "load_model",
    "run_experiment",
    "save_model",
    "train_seed",
]
