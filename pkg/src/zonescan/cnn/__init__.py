"""Toy AlexNet-style classifier trained with momentum SGD."""

from .checkpoint import checkpoint_roundtrip, load_checkpoint, save_checkpoint
from .model import TOY_ALEXNET, CnnModel, architecture, layer_stats, sgd_step, write_layer_stats
from .train import TrainConfig, TrainingLog, train, train_arrays

__all__ = [
    "TOY_ALEXNET",
    "CnnModel",
    "TrainConfig",
    "TrainingLog",
    "architecture",
    "checkpoint_roundtrip",
    "layer_stats",
    "load_checkpoint",
    "save_checkpoint",
    "sgd_step",
    "train",
    "train_arrays",
    "write_layer_stats",
]
