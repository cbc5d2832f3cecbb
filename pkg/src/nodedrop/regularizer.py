"""NodeDrop regularizers and their subgradients.

Vanilla units are pushed towards ||max(w, 0)||_1 + b <= -C, batch-norm units
towards |gamma| sqrt(m) + beta_shift <= -C. Only the positive part of the
weights is penalized, and the bias term is centered at -C rather than 0 so the
optimum sits safely inside the dead region.
"""

from __future__ import annotations

from typing import Dict, Optional, Tuple

import numpy as np

from src.errors import ContractError
from src.nodedrop.config import NodeDropConfig, NodeDropMode
from src.nodedrop.margins import bn_effective_count

Params = Dict[str, np.ndarray]


def _is_batch_norm(params: Params) -> bool:
    return "gamma" in params


def _bn_count(config: NodeDropConfig, m: Optional[int]) -> int:
    count = config.batch_size if m is None else int(m)
    if count < 2:
        raise ContractError(f"batch-norm regularizer needs m >= 2, got {count}")
    return count


def regularization_loss(params: Params, config: NodeDropConfig, m: Optional[int] = None) -> float:
    """Regularizer value for one prunable layer.

    ``params`` holds ``W``/``b`` for a vanilla unit or ``gamma``/``beta_shift``
    for a batch-norm unit. ``m`` overrides ``config.batch_size`` with the number
    of values per channel (``m*H*W`` after a convolution).
    """
    lam = config.lambda_
    if lam == 0:
        return 0.0
    if _is_batch_norm(params):
        count = _bn_count(config, m)
        gamma = params["gamma"].astype(np.float64)
        shift = params["beta_shift"].astype(np.float64)
        total = np.abs(gamma).sum() * np.sqrt(count) + np.abs(shift + config.c).sum()
        return float(lam * total)
    W = params["W"].astype(np.float64)
    b = params["b"].astype(np.float64)
    total = np.maximum(W, 0).sum() + np.abs(b + config.c).sum()
    return float(lam * total)


def regularization_grad(
    params: Params, config: NodeDropConfig, m: Optional[int] = None
) -> Dict[str, np.ndarray]:
    """Subgradients of ``regularization_loss`` with sign(0) = 0, in the parameter dtype."""
    lam = config.lambda_
    if _is_batch_norm(params):
        gamma, shift = params["gamma"], params["beta_shift"]
        if lam == 0:
            return {"gamma": np.zeros_like(gamma), "beta_shift": np.zeros_like(shift)}
        count = _bn_count(config, m)
        g_gamma = lam * np.sqrt(count) * np.sign(gamma.astype(np.float64))
        g_shift = lam * np.sign(shift.astype(np.float64) + config.c)
        return {
            "gamma": g_gamma.astype(gamma.dtype),
            "beta_shift": g_shift.astype(shift.dtype),
        }
    W, b = params["W"], params["b"]
    if lam == 0:
        return {"W": np.zeros_like(W), "b": np.zeros_like(b)}
    g_w = np.where(W > 0, lam, 0.0)
    g_b = lam * np.sign(b.astype(np.float64) + config.c)
    return {"W": g_w.astype(W.dtype), "b": g_b.astype(b.dtype)}


def network_regularization(model, config: NodeDropConfig) -> Tuple[float, Dict[str, np.ndarray]]:
    """Sum of the regularizer over every prunable unit of ``model``.

    Gradients are keyed like ``model.parameters()``. With lambda == 0 nothing
    is computed and the gradient dict is empty.
    """
    if config.lambda_ == 0:
        return 0.0, {}
    loss = 0.0
    grads: Dict[str, np.ndarray] = {}
    for unit in model.prunable_units(config.mode):
        if config.mode is NodeDropMode.BATCH_NORM:
            index = unit.norm_layer
            state = model.states[index]
            params = {"gamma": state.gamma, "beta_shift": state.beta_shift}
            count = bn_effective_count(model.shapes[index], config.batch_size)
            loss += regularization_loss(params, config, m=count)
            layer_grads = regularization_grad(params, config, m=count)
        else:
            index = unit.layer
            state = model.states[index]
            params = {"W": state.W, "b": state.b}
            loss += regularization_loss(params, config)
            layer_grads = regularization_grad(params, config)
        for name, grad in layer_grads.items():
            grads[f"{index}.{name}"] = grad
    return loss, grads
