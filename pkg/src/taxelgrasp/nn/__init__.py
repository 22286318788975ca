"""Minimal float64 autodiff engine: tensors, layers, RMSprop, checkpoints."""

from .checkpoint import Checkpoint, CheckpointError, read_checkpoint, write_checkpoint
from .layers import (
    LSTM,
    Conv2D,
    Conv3D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool,
    Network,
    ReLU,
    SoftmaxXent,
)
from .optim import RmsPropState, rmsprop_step
from .tensor import Tensor, backward

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "Conv2D",
    "Conv3D",
    "Dense",
    "Dropout",
    "Flatten",
    "LSTM",
    "Layer",
    "MaxPool",
    "Network",
    "ReLU",
    "RmsPropState",
    "SoftmaxXent",
    "Tensor",
    "backward",
    "read_checkpoint",
    "rmsprop_step",
    "write_checkpoint",
]
