from __future__ import annotations

from typing import Tuple

import numpy as np

from src.errors import ContractError, DimensionError


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient (softmax - onehot) / N."""
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} and labels {labels.shape} do not match")
    n, k = logits.shape
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean()) if n else 0.0
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1
    grad /= max(n, 1)
    return loss, grad.astype(logits.dtype, copy=False)
