"""Minimal reverse-mode autodiff engine and neural primitives."""
from .gradcheck import finite_difference_check, parameter_gradient_check
from .nn import (
    bilstm,
    conv1d,
    conv2d,
    embedding_lookup,
    linear,
    lstm,
    lstm_cell,
    mse_loss,
    scaled_dot_attention,
    transformer_ffn_block,
)
from .optim import OptimizerState, optimizer_step
from .params import ParameterSet
from .tensor import Parameter, Tensor, backward

__all__ = [
    "Parameter", "ParameterSet", "Tensor", "OptimizerState", "backward", "bilstm", "conv1d", "conv2d",
    "embedding_lookup", "finite_difference_check", "linear", "parameter_gradient_check", "lstm", "lstm_cell", "mse_loss",
    "optimizer_step", "scaled_dot_attention", "transformer_ffn_block",
]
