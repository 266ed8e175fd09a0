"""Minimal reverse-mode tensor core: float64 tensors, a recorded op graph,
LSTM cell kernels with a compiled fast path, parameter storage and
finite-difference gradient checking."""

from .backend import backend_name
from .gradcheck import grad_check
from .params import ParameterStore
from .tensor import (
    ShapeMismatch, Tensor, add, backward, broadcast_rows, clip, concat,
    constant, hadamard, log, lstm_cell, matmul, mean, no_grad, pick, relu,
    reshape, rows, scale, sigmoid, softmax, tanh, tsum,
)

__all__ = [
    "ShapeMismatch", "Tensor", "ParameterStore", "add", "backward",
    "backend_name", "broadcast_rows", "clip", "concat", "constant",
    "grad_check", "hadamard", "log", "lstm_cell", "matmul", "mean",
    "no_grad", "pick", "relu", "reshape", "rows", "scale", "sigmoid",
    "softmax", "tanh", "tsum",
]
