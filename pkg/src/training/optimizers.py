"""SGD with momentum and Adam over parameter dicts keyed ``"<layer>.<param>"``.

Updates are applied in place. SGD uses the convention v <- mu*v + g,
w <- w - lr*v. Adam is bias-corrected with beta1=0.9, beta2=0.999, eps=1e-8.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from src.errors import DimensionError
from src.training.config import OptimizerKind, TrainConfig

Arrays = Dict[str, np.ndarray]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class SGDState:
    velocity: Arrays = field(default_factory=dict)


@dataclass
class AdamState:
    m: Arrays = field(default_factory=dict)
    v: Arrays = field(default_factory=dict)
    t: int = 0


def _check(key: str, param: np.ndarray, grad: np.ndarray) -> None:
    if param.shape != grad.shape:
        raise DimensionError(f"gradient for {key} has shape {grad.shape}, expected {param.shape}")


def sgd_step(
    params: Arrays, grads: Mapping[str, np.ndarray], state: SGDState, lr: float, momentum: float
) -> SGDState:
    for key, grad in grads.items():
        param = params[key]
        _check(key, param, grad)
        buf = state.velocity.get(key)
        if buf is None:
            buf = state.velocity[key] = np.zeros_like(param)
        buf *= param.dtype.type(momentum)
        buf += grad
        param -= param.dtype.type(lr) * buf
    return state


def adam_step(
    params: Arrays, grads: Mapping[str, np.ndarray], state: AdamState, lr: float
) -> AdamState:
    state.t += 1
    bc1 = 1 - ADAM_BETA1**state.t
    bc2 = 1 - ADAM_BETA2**state.t
    for key, grad in grads.items():
        param = params[key]
        _check(key, param, grad)
        t = param.dtype.type
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(param)
            state.v[key] = np.zeros_like(param)
        v = state.v[key]
        m *= t(ADAM_BETA1)
        m += t(1 - ADAM_BETA1) * grad
        v *= t(ADAM_BETA2)
        v += t(1 - ADAM_BETA2) * grad * grad
        m_hat = m / t(bc1)
        v_hat = v / t(bc2)
        param -= t(lr) * m_hat / (np.sqrt(v_hat) + t(ADAM_EPS))
    return state


class Optimizer:
    def step(self, params: Arrays, grads: Mapping[str, np.ndarray], lr: float) -> None:
        raise NotImplementedError

    def zero_rows(self, key: str, rows: np.ndarray) -> None:
        """Reset the per-parameter state of the given output rows (node indices)."""
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, momentum: float = 0.9):
        self.momentum = momentum
        self.state = SGDState()

    def step(self, params, grads, lr):
        sgd_step(params, grads, self.state, lr, self.momentum)

    def zero_rows(self, key, rows):
        if key in self.state.velocity:
            self.state.velocity[key][rows] = 0


class Adam(Optimizer):
    def __init__(self):
        self.state = AdamState()

    def step(self, params, grads, lr):
        adam_step(params, grads, self.state, lr)

    def zero_rows(self, key, rows):
        if key in self.state.m:
            self.state.m[key][rows] = 0
            self.state.v[key][rows] = 0


def make_optimizer(config: TrainConfig) -> Optimizer:
    if config.optimizer is OptimizerKind.SGD:
        return SGD(momentum=config.momentum)
    return Adam()
