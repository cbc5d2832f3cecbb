"""Batch normalization over the channel axis (axis 1) of 2-D or 4-D inputs.

Train mode normalizes with the biased batch variance (divide by the count of
values per channel), which is what bounds every normalized value by the square
root of that count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Tuple

import numpy as np

from src.errors import ContractError, DimensionError

Mode = Literal["train", "eval"]


@dataclass(frozen=True)
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray  # per channel
    count: int  # values per channel in the batch
    mode: str


def _reduce_axes(x: np.ndarray) -> Tuple[int, ...]:
    if x.ndim == 2:
        return (0,)
    if x.ndim == 4:
        return (0, 2, 3)
    raise DimensionError(f"batchnorm expects 2-D or 4-D input, got {x.shape}")


def _per_channel(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def values_per_channel(x: np.ndarray) -> int:
    """m for dense inputs, m*H*W for convolutional inputs."""
    return int(x.size // x.shape[1]) if x.shape[1] else int(x.shape[0])


def batchnorm_forward(state, x: np.ndarray, mode: Mode, eps: float = 1e-5, momentum: float = 0.1):
    """Returns (y, cache). ``state`` is a LayerState with gamma/beta_shift/running stats.

    In train mode the running statistics are updated in place by exponential
    moving average with weight ``momentum`` on the new batch statistics.
    """
    axes = _reduce_axes(x)
    channels = state.gamma.shape[0]
    if x.shape[1] != channels:
        raise DimensionError(f"batchnorm has {channels} channels, input has {x.shape[1]}")
    dtype = x.dtype.type
    if mode == "train":
        if x.shape[0] < 2:
            raise ContractError(f"train-mode batch norm needs batch size >= 2, got {x.shape[0]}")
        mean = x.mean(axis=axes)
        var = ((x - _per_channel(mean, x.ndim)) ** 2).mean(axis=axes)
        state.running_mean *= 1 - momentum
        state.running_mean += momentum * mean.astype(state.running_mean.dtype)
        state.running_var *= 1 - momentum
        state.running_var += momentum * var.astype(state.running_var.dtype)
    elif mode == "eval":
        mean = state.running_mean.astype(x.dtype, copy=False)
        var = state.running_var.astype(x.dtype, copy=False)
    else:
        raise ContractError(f"unknown batchnorm mode '{mode}'")
    inv_std = 1 / np.sqrt(var + dtype(eps))
    x_hat = (x - _per_channel(mean, x.ndim)) * _per_channel(inv_std, x.ndim)
    y = _per_channel(state.gamma, x.ndim) * x_hat + _per_channel(state.beta_shift, x.ndim)
    cache = BatchNormCache(
        x_hat=x_hat, inv_std=inv_std, count=values_per_channel(x), mode=mode
    )
    return y.astype(x.dtype, copy=False), cache


def batchnorm_backward(state, cache: BatchNormCache, grad_y: np.ndarray):
    """Returns (grad_x, {"gamma": ..., "beta_shift": ...})."""
    if grad_y.shape != cache.x_hat.shape:
        raise ContractError("batchnorm gradient does not match the cached forward output")
    axes = _reduce_axes(grad_y)
    ndim = grad_y.ndim
    grad_gamma = (grad_y * cache.x_hat).sum(axis=axes)
    grad_beta = grad_y.sum(axis=axes)
    g_hat = grad_y * _per_channel(state.gamma, ndim)
    if cache.mode == "eval":
        grad_x = g_hat * _per_channel(cache.inv_std, ndim)
    else:
        m = cache.count
        sum_g = _per_channel(g_hat.sum(axis=axes), ndim)
        sum_gx = _per_channel((g_hat * cache.x_hat).sum(axis=axes), ndim)
        grad_x = (
            _per_channel(cache.inv_std, ndim) / m * (m * g_hat - sum_g - cache.x_hat * sum_gx)
        )
    return grad_x.astype(grad_y.dtype, copy=False), {"gamma": grad_gamma, "beta_shift": grad_beta}
