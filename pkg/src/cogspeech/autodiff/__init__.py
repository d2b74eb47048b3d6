"""Minimal reverse-mode autodiff: tensors, ops, Adam, gradient checking."""

from .adam import Adam
from .gradcheck import grad_check
from .tensor import (
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    concat,
    conv1d,
    exp,
    gelu,
    getitem,
    layer_norm,
    log,
    log_softmax,
    matmul,
    sigmoid,
    softmax,
    sqrt,
    stack,
    tanh,
    tensor_mean,
    tensor_sum,
    transpose,
    zero_grads,
)

__all__ = [
    "Adam",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "backward",
    "concat",
    "conv1d",
    "exp",
    "gelu",
    "getitem",
    "grad_check",
    "layer_norm",
    "log",
    "log_softmax",
    "matmul",
    "sigmoid",
    "softmax",
    "sqrt",
    "stack",
    "tanh",
    "tensor_mean",
    "tensor_sum",
    "transpose",
    "zero_grads",
]
