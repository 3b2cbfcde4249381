"""Minimal dense-array engine with reverse-mode differentiation."""

from .gradcheck import finite_diff_check
from .ops import (
    ShapeError,
    batchnorm1d,
    conv1d,
    conv2d,
    cosine_sim,
    dropout,
    flatten,
    leaky_relu,
    linear,
    log_softmax,
    maxpool1d,
    mse,
    softmax,
    weighted_cross_entropy,
)
from .optim import Adam, AdamState, Parameter, adam_step, kaiming_init
from .rng import Rng
from .tensor import DEFAULT_DTYPE, GraphError, Tensor, backward, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "DEFAULT_DTYPE",
    "GraphError",
    "Parameter",
    "Rng",
    "ShapeError",
    "Tensor",
    "adam_step",
    "backward",
    "batchnorm1d",
    "conv1d",
    "conv2d",
    "cosine_sim",
    "dropout",
    "finite_diff_check",
    "flatten",
    "kaiming_init",
    "leaky_relu",
    "linear",
    "log_softmax",
    "maxpool1d",
    "mse",
    "no_grad",
    "softmax",
    "weighted_cross_entropy",
]
