"""Small reverse-mode autodiff engine over float64 numpy arrays."""

from . import checkpoint
from .conv import causal_conv1d, conv2d, conv_transpose2d
from .nn import CausalConv1d, Conv2d, ConvTranspose2d, Dense, Layer
from .optim import Adam, OptimState, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    clip,
    concat,
    exp,
    l2_normalize,
    linear,
    log,
    matmul,
    mean,
    minimum,
    mse,
    mul,
    parameter,
    relu,
    reshape,
    sigmoid,
    softplus,
    square,
    sub,
    sum,
    take,
    tanh,
)

__all__ = [
    "Adam", "CausalConv1d", "Conv2d", "ConvTranspose2d", "Dense", "Layer", "OptimState",
    "Tensor", "adam_step", "add", "as_tensor", "backward", "causal_conv1d", "checkpoint",
    "clip", "concat", "conv2d", "conv_transpose2d", "exp", "l2_normalize", "linear", "log",
    "matmul", "mean", "minimum", "mse", "mul", "parameter", "relu", "reshape", "sigmoid",
    "softplus", "square", "sub", "sum", "take", "tanh",
]
