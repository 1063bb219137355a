"""Training, evaluation, ablation, reconstruction export and the command line."""

from .checkpoint import Checkpoint, check_compatible
from .checkpoint import load as load_checkpoint
from .checkpoint import save as save_checkpoint
from .config import DatasetConfig, OptimizerConfig, SchedulerConfig, TrainConfig
from .evaluate import Prediction, evaluate, evaluate_ground_truth, evaluate_model, predict
from .train import TrainResult, load_splits, train, with_seed

__all__ = [
    "Checkpoint",
    "DatasetConfig",
    "OptimizerConfig",
    "Prediction",
    "SchedulerConfig",
    "TrainConfig",
    "TrainResult",
    "check_compatible",
    "evaluate",
    "evaluate_ground_truth",
    "evaluate_model",
    "load_checkpoint",
    "load_splits",
    "predict",
    "save_checkpoint",
    "train",
    "with_seed",
]
