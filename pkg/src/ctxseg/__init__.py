"""Two-stream contextual attention segmentation network, from scratch on
numpy: a CNN encoder and a patch transformer fused by channel recalibration,
boundary injection, and per-region feature scaling."""

from .config import TrainConfig, load_config
from .data import Batch, DatasetSpec, Sample, generate_dataset
from .errors import (
    CheckpointError, ConfigError, DataError, NumericalError, ShapeError)
from .losses import LossWeights, bce, joint_loss, mse
from .metrics import ConfusionCounts, compute_metrics, confusion_counts
from .network import ContextualSegNet, ForwardOutputs, build_network
from .optim import Adam
from .tensor import Tensor
from .train import evaluate, predict, run_training

__all__ = [
    "Adam", "Batch", "CheckpointError", "ConfigError", "ConfusionCounts",
    "ContextualSegNet", "DataError", "DatasetSpec", "ForwardOutputs",
    "LossWeights", "NumericalError", "Sample", "ShapeError", "Tensor",
    "TrainConfig", "bce", "build_network", "compute_metrics",
    "confusion_counts", "evaluate", "generate_dataset", "joint_loss",
    "load_config", "mse", "predict", "run_training",
]
