"""Activation functions with a flat zero region for v <= 0.

``soft_clamped_relu`` is max(0, 1 - log(1 + exp(beta * (1 - v))) / beta): flat
zero below 0, output in [0, 1), and a soft (never exactly flat) upper region so
units do not get stuck at 1. ``clamped_relu`` is min(1, max(0, v)). Both keep a
layer's output in [0, 1], which is what lets the next layer be certified.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from src.errors import ContractError


class ActivationKind(str, Enum):
    RELU = "relu"
    CLAMPED_RELU = "clamped_relu"
    SOFT_CLAMPED_RELU = "soft_clamped_relu"

    @property
    def bounded(self) -> bool:
        """Output guaranteed to lie in [0, 1]."""
        return self is not ActivationKind.RELU


def _softplus(z: np.ndarray) -> np.ndarray:
    # logaddexp(0, z) == log(1 + e^z), evaluated as z + log1p(e^-z) for z > 0
    return np.logaddexp(np.zeros((), dtype=z.dtype), z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-_softplus(-z))


def _soft_clamped_raw(v: np.ndarray, beta: float) -> np.ndarray:
    b = v.dtype.type(beta)
    return 1 - _softplus(b * (1 - v)) / b


def activation_apply(kind: ActivationKind, beta: float, v: np.ndarray) -> np.ndarray:
    kind = ActivationKind(kind)
    if kind is ActivationKind.RELU:
        return np.maximum(v, 0)
    if kind is ActivationKind.CLAMPED_RELU:
        return np.clip(v, 0, 1)
    if beta <= 0:
        raise ContractError(f"soft_clamped_relu needs beta > 0, got {beta}")
    return np.maximum(_soft_clamped_raw(v, beta), 0)


def activation_grad(kind: ActivationKind, beta: float, v: np.ndarray) -> np.ndarray:
    """Derivative w.r.t. the pre-activation; 0 wherever the pre-clamp value is <= 0."""
    kind = ActivationKind(kind)
    one = v.dtype.type(1)
    zero = v.dtype.type(0)
    if kind is ActivationKind.RELU:
        return np.where(v > 0, one, zero)
    if kind is ActivationKind.CLAMPED_RELU:
        return np.where((v > 0) & (v < 1), one, zero)
    if beta <= 0:
        raise ContractError(f"soft_clamped_relu needs beta > 0, got {beta}")
    raw = _soft_clamped_raw(v, beta)
    slope = _sigmoid(v.dtype.type(beta) * (1 - v))
    return np.where(raw > 0, slope, zero)
