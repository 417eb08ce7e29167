"""Convolution primitives: 2-D (valid padding), 2-D transposed, causal 1-D.

All three take batched input (N, C, ...) and also accept a single unbatched
sample, in which case the batch axis is dropped from the result.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError
from .tensor import Tensor, as_tensor, make_node


def _batched(x: Tensor, ndim: int) -> tuple[Tensor, bool]:
    if x.ndim == ndim - 1:
        return _add_batch_axis(x), True
    if x.ndim != ndim:
        raise ContractError(f"expected {ndim - 1}- or {ndim}-d input, got shape {x.shape}")
    return x, False


def _add_batch_axis(x: Tensor) -> Tensor:
    shape = x.shape
    return make_node(x.data[None], (x,), lambda g: (g.reshape(shape),), "unsqueeze")


def _drop_batch_axis(x: Tensor) -> Tensor:
    shape = x.shape
    return make_node(x.data[0], (x,), lambda g: (g.reshape(shape),), "squeeze")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Cross-correlation with valid padding.

    x: (N, C_in, H, W) or (C_in, H, W); weight: (C_out, C_in, k, k).
    Output spatial size is ``(H - k) // stride + 1``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    x, unbatched = _batched(x, 4)
    if stride < 1:
        raise ContractError("stride must be >= 1")
    n, c, h, w = x.shape
    if weight.ndim != 4 or weight.shape[1] != c or weight.shape[2] != weight.shape[3]:
        raise ContractError(f"conv2d kernel {weight.shape} incompatible with input {x.shape}")
    k = weight.shape[2]
    if h < k or w < k:
        raise ContractError(f"conv2d input {h}x{w} smaller than kernel {k}")
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    xd, wd = x.data, weight.data
    # (N, C, Ho, Wo, k, k)
    cols = sliding_window_view(xd, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
        parents = (x, weight, bias)

    def bw(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        gx = np.zeros_like(xd)
        he, we = stride * (ho - 1) + 1, stride * (wo - 1) + 1
        for i in range(k):
            for j in range(k):
                contrib = np.tensordot(g, wd[:, :, i, j], axes=([1], [0]))
                gx[:, :, i : i + he : stride, j : j + we : stride] += contrib.transpose(0, 3, 1, 2)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    y = make_node(np.ascontiguousarray(out), parents, bw, "conv2d")
    return _drop_batch_axis(y) if unbatched else y


def conv_transpose2d(
    x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1
) -> Tensor:
    """Transposed convolution, the adjoint of :func:`conv2d` with the same kernel.

    x: (N, C_in, H, W); weight: (C_in, C_out, k, k), i.e. the conv2d kernel that
    maps C_out -> C_in. Output spatial size is ``(H - 1) * stride + k``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    x, unbatched = _batched(x, 4)
    if stride < 1:
        raise ContractError("stride must be >= 1")
    n, c, h, w = x.shape
    if weight.ndim != 4 or weight.shape[0] != c or weight.shape[2] != weight.shape[3]:
        raise ContractError(
            f"conv_transpose2d kernel {weight.shape} incompatible with input {x.shape}"
        )
    co, k = weight.shape[1], weight.shape[2]
    ho, wo = (h - 1) * stride + k, (w - 1) * stride + k
    he, we = stride * (h - 1) + 1, stride * (w - 1) + 1
    xd, wd = x.data, weight.data
    out = np.zeros((n, co, ho, wo))
    for i in range(k):
        for j in range(k):
            tap = np.tensordot(xd, wd[:, :, i, j], axes=([1], [0]))  # N, H, W, Co
            out[:, :, i : i + he : stride, j : j + we : stride] += tap.transpose(0, 3, 1, 2)
    parents: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        out += bias.data[None, :, None, None]
        parents = (x, weight, bias)

    def bw(g):
        gx = np.zeros_like(xd)
        gw = np.empty_like(wd)
        for i in range(k):
            for j in range(k):
                gs = g[:, :, i : i + he : stride, j : j + we : stride]
                gx += np.tensordot(gs, wd[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
                gw[:, :, i, j] = np.tensordot(xd, gs, axes=([0, 2, 3], [0, 2, 3]))
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    y = make_node(out, parents, bw, "conv_transpose2d")
    return _drop_batch_axis(y) if unbatched else y


def causal_conv1d(
    x: Tensor, weight: Tensor, bias: Tensor | None = None, dilation: int = 1
) -> Tensor:
    """Dilated 1-D convolution, left-padded so output[t] sees only input[<= t].

    x: (N, C_in, L) or (C_in, L); weight: (C_out, C_in, k). Tap ``k - 1`` is the
    current timestep, tap ``k - 1 - j`` reaches back ``j * dilation`` steps.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    x, unbatched = _batched(x, 3)
    n, c, length = x.shape
    if length < 1:
        raise ContractError("causal_conv1d needs L >= 1")
    if weight.ndim != 3 or weight.shape[1] != c:
        raise ContractError(f"causal_conv1d kernel {weight.shape} incompatible with {x.shape}")
    if dilation < 1:
        raise ContractError("dilation must be >= 1")
    k = weight.shape[2]
    pad = (k - 1) * dilation
    xd, wd = x.data, weight.data
    xp = np.concatenate([np.zeros((n, c, pad)), xd], axis=2)
    out = np.zeros((n, weight.shape[0], length))
    for j in range(k):
        seg = xp[:, :, j * dilation : j * dilation + length]
        out += np.tensordot(seg, wd[:, :, j], axes=([1], [1])).transpose(0, 2, 1)
    parents: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        out += bias.data[None, :, None]
        parents = (x, weight, bias)

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for j in range(k):
            seg = xp[:, :, j * dilation : j * dilation + length]
            gw[:, :, j] = np.tensordot(g, seg, axes=([0, 2], [0, 2]))
            gxp[:, :, j * dilation : j * dilation + length] += np.tensordot(
                g, wd[:, :, j], axes=([1], [0])
            ).transpose(0, 2, 1)
        gx = gxp[:, :, pad:]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    y = make_node(out, parents, bw, "causal_conv1d")
    return _drop_batch_axis(y) if unbatched else y
