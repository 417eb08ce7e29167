"""Parameterised layers built on the gradnet primitives."""

from __future__ import annotations

import math

import numpy as np

from .conv import causal_conv1d, conv2d, conv_transpose2d
from .tensor import Tensor, linear, parameter


def _uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)  # He-uniform, suits ReLU stacks
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Holds named parameters; subclasses implement ``__call__``."""

    weight: Tensor
    bias: Tensor

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False):
        shape = (n_in, n_out)
        w = np.zeros(shape) if zero else _uniform(rng, n_in, shape)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Conv2d(Layer):
    def __init__(self, c_in: int, c_out: int, k: int, stride: int, rng: np.random.Generator):
        self.stride = stride
        self.weight = parameter(_uniform(rng, c_in * k * k, (c_out, c_in, k, k)))
        self.bias = parameter(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride)


class ConvTranspose2d(Layer):
    def __init__(self, c_in: int, c_out: int, k: int, stride: int, rng: np.random.Generator):
        self.stride = stride
        # each output cell receives c_in * (k/stride)^2 taps when k is a multiple of stride
        fan_in = max(1, c_in * (k // stride) ** 2)
        self.weight = parameter(_uniform(rng, fan_in, (c_in, c_out, k, k)))
        self.bias = parameter(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.weight, self.bias, self.stride)


class CausalConv1d(Layer):
    def __init__(self, c_in: int, c_out: int, k: int, dilation: int, rng: np.random.Generator):
        self.dilation = dilation
        self.weight = parameter(_uniform(rng, c_in * k, (c_out, c_in, k)))
        self.bias = parameter(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return causal_conv1d(x, self.weight, self.bias, self.dilation)
