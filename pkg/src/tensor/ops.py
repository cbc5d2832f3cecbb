"""Tensor operations used by every layer.

Tensors are plain ``numpy.ndarray`` objects in row-major (C) order. Training
runs in float32; float64 exists for gradient verification. All reductions that
matter for reproducibility (matmul, convolution) go through the fixed-order
kernels in ``src.tensor.kernels``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.errors import ContractError, DimensionError
from src.tensor.kernels import batched_left_matmul_kernel, matmul_kernel

Tensor = np.ndarray

KERNEL_SIZE = 3
PAD = 1


def dtype_for(precision: int) -> np.dtype:
    if precision == 32:
        return np.dtype(np.float32)
    if precision == 64:
        return np.dtype(np.float64)
    raise ContractError(f"precision must be 32 or 64, got {precision}")


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Seeded generator; extra keys pre-split independent streams (epoch, batch, ...)."""
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


def _common_dtype(*arrays: np.ndarray) -> np.dtype:
    return np.result_type(*arrays, np.float32)


# ------------- Matmul -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    dtype = _common_dtype(a, b)
    a_c = np.ascontiguousarray(a, dtype=dtype)
    b_c = np.ascontiguousarray(b, dtype=dtype)
    out = np.empty((a.shape[0], b.shape[1]), dtype=dtype)
    matmul_kernel(a_c, b_c, out)
    return out


# ------------- Convolution (3x3, stride 1, zero same-padding) -----------------


@dataclass(frozen=True)
class Conv2dCache:
    cols: Tensor  # (N, Cin*9, H*W)
    input_shape: Tuple[int, int, int, int]
    kernel_shape: Tuple[int, int, int, int]


def im2col(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C*9, H*W) with rows ordered (c, kh, kw)."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD)), mode="constant")
    windows = sliding_window_view(xp, (KERNEL_SIZE, KERNEL_SIZE), axis=(2, 3))
    # windows: (N, C, H, W, 3, 3)
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * KERNEL_SIZE * KERNEL_SIZE, h * w)
    return np.ascontiguousarray(cols)


def col2im(cols: Tensor, input_shape: Tuple[int, int, int, int]) -> Tensor:
    n, c, h, w = input_shape
    blocks = cols.reshape(n, c, KERNEL_SIZE, KERNEL_SIZE, h, w)
    padded = np.zeros((n, c, h + 2 * PAD, w + 2 * PAD), dtype=cols.dtype)
    for kh in range(KERNEL_SIZE):
        for kw in range(KERNEL_SIZE):
            padded[:, :, kh : kh + h, kw : kw + w] += blocks[:, :, kh, kw]
    return padded[:, :, PAD : PAD + h, PAD : PAD + w]


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tuple[Tensor, Conv2dCache]:
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be N x C x H x W, got {x.shape}")
    if kernels.ndim != 4 or kernels.shape[2:] != (KERNEL_SIZE, KERNEL_SIZE):
        raise DimensionError(f"conv2d kernels must be Cout x Cin x 3 x 3, got {kernels.shape}")
    if kernels.shape[1] != x.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input has {x.shape[1]}, kernels expect {kernels.shape[1]}"
        )
    if bias.shape != (kernels.shape[0],):
        raise DimensionError(f"conv2d bias must have shape ({kernels.shape[0]},), got {bias.shape}")
    n, _, h, w = x.shape
    c_out = kernels.shape[0]
    dtype = _common_dtype(x, kernels)
    cols = im2col(x.astype(dtype, copy=False))
    w2 = np.ascontiguousarray(kernels.reshape(c_out, -1), dtype=dtype)
    out = np.empty((n, c_out, h * w), dtype=dtype)
    batched_left_matmul_kernel(w2, cols, out)
    out += bias.astype(dtype, copy=False)[None, :, None]
    cache = Conv2dCache(cols=cols, input_shape=tuple(x.shape), kernel_shape=tuple(kernels.shape))
    return out.reshape(n, c_out, h, w), cache


def conv2d_grads(
    cache: Conv2dCache, grad_out: Tensor, kernels: Tensor
) -> Tuple[Tensor, Tensor, Tensor]:
    """Gradients of ``conv2d`` w.r.t. input, kernels and bias."""
    n, c_in, h, w = cache.input_shape
    c_out = cache.kernel_shape[0]
    if tuple(kernels.shape) != cache.kernel_shape:
        raise ContractError(
            f"kernels {kernels.shape} do not match cached forward kernels {cache.kernel_shape}"
        )
    if grad_out.shape != (n, c_out, h, w):
        raise ContractError(
            f"grad_out {grad_out.shape} does not match cached forward output {(n, c_out, h, w)}"
        )
    dtype = cache.cols.dtype
    g = np.ascontiguousarray(grad_out.reshape(n, c_out, h * w), dtype=dtype)

    grad_bias = g.sum(axis=(0, 2))
    g_flat = np.ascontiguousarray(g.transpose(1, 0, 2).reshape(c_out, n * h * w))
    cols_flat = np.ascontiguousarray(cache.cols.transpose(0, 2, 1).reshape(n * h * w, -1))
    grad_kernels = matmul(g_flat, cols_flat).reshape(cache.kernel_shape)

    w2t = np.ascontiguousarray(kernels.reshape(c_out, -1).T, dtype=dtype)
    grad_cols = np.empty((n, c_in * KERNEL_SIZE * KERNEL_SIZE, h * w), dtype=dtype)
    batched_left_matmul_kernel(w2t, g, grad_cols)
    grad_input = col2im(grad_cols, cache.input_shape)
    return grad_input, grad_kernels, grad_bias


# ------------- Pooling --------------------------------------------------------


def maxpool2d(x: Tensor) -> Tuple[Tensor, np.ndarray]:
    """2x2 non-overlapping max; argmax in 0..3 (row-major in the window, first max wins)."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d input must be N x C x H x W, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2d needs even spatial dims, got {h}x{w}")
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(n, c, h // 2, w // 2, 4)
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return out, argmax.astype(np.int8)


def maxpool2d_backward(
    grad_out: Tensor, argmax: np.ndarray, input_shape: Tuple[int, int, int, int]
) -> Tensor:
    n, c, h, w = input_shape
    if grad_out.shape != (n, c, h // 2, w // 2) or argmax.shape != grad_out.shape:
        raise ContractError("maxpool2d_backward received a gradient that does not match its cache")
    routed = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad_out.dtype)
    np.put_along_axis(routed, argmax[..., None].astype(np.intp), grad_out[..., None], axis=-1)
    routed = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return routed.reshape(n, c, h, w)
