"""Minimal reverse-mode engine with the layers the decoding models use."""

from .layers import (
    LayerParams,
    activation,
    bce_loss,
    conv_forward,
    conv_params,
    dense_forward,
    dense_params,
    dropout,
    glorot_init,
    lstm_forward,
    lstm_params,
    lstm_step,
    max_pool,
)
from .optim import OptimizerState, sgd_step
from .tensor import Tensor, concat, no_grad, reshape, transpose

__all__ = [
    "LayerParams",
    "OptimizerState",
    "Tensor",
    "activation",
    "bce_loss",
    "concat",
    "conv_forward",
    "conv_params",
    "dense_forward",
    "dense_params",
    "dropout",
    "glorot_init",
    "lstm_forward",
    "lstm_params",
    "lstm_step",
    "max_pool",
    "no_grad",
    "reshape",
    "sgd_step",
    "transpose",
]
