"""Minimal reverse-mode differentiation: layer graphs, Adadelta, checkpoints."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .graph import Graph, NonFiniteError
from .layers import (
    BatchNorm,
    Conv2d,
    ConvTranspose2d,
    Dense,
    Dropout,
    Flatten,
    GaussianNoise,
    Layer,
    MaxPool2,
    ReLU,
    Reshape,
    ShapeError,
    Sigmoid,
    Tanh,
)
from .optim import Adadelta, AdadeltaState, adadelta_step

__all__ = [
    "Adadelta",
    "AdadeltaState",
    "BatchNorm",
    "CheckpointError",
    "Conv2d",
    "ConvTranspose2d",
    "Dense",
    "Dropout",
    "Flatten",
    "GaussianNoise",
    "Graph",
    "Layer",
    "MaxPool2",
    "NonFiniteError",
    "ReLU",
    "Reshape",
    "ShapeError",
    "Sigmoid",
    "Tanh",
    "adadelta_step",
    "load_checkpoint",
    "save_checkpoint",
]
