"""Dead-node margins.

For a node with non-negative bounded inputs x in [0, 1]^n the pre-activation
w.x + b is at most ||max(w, 0)||_1 + b, attained at the vertex x_i = 1 where
w_i > 0. A margin <= 0 therefore certifies the node outputs exactly zero after
any activation that is flat on (-inf, 0].

After batch norm every normalized value satisfies |x_hat| <= sqrt(m) for a
batch of m values per channel, so |gamma| sqrt(m) + beta_shift <= 0 certifies
the post-BN pre-activation is <= 0 for every training batch of that size.

Vanilla margins are accumulated left to right in the weight dtype, the same
order and precision the forward kernels use. Rounding is monotone, so the
forward pre-activation at any x in [0, 1]^n never exceeds the computed margin
and the certificate holds bit-for-bit, not just in exact arithmetic.
"""

from __future__ import annotations

import numpy as np

from src.errors import ContractError


def node_margin(w: np.ndarray, b: float) -> float:
    """||max(w, 0)||_1 + b for one node (conv filters flattened over in_ch x 3 x 3)."""
    w = np.asarray(w)
    if w.size == 0:
        raise ContractError("node_margin needs a non-empty fan-in weight vector")
    return float(node_margins(w.reshape(1, -1), np.asarray([b], dtype=w.dtype))[0])


def is_dead(margin):
    """True where a margin certifies the node dead (margin <= 0, so 0 counts as dead)."""
    return np.asarray(margin) <= 0


def weak_node_margin(w: np.ndarray, b: float) -> float:
    """||w||_1 + b; never below node_margin, so it certifies fewer nodes."""
    w = np.asarray(w)
    if w.size == 0:
        raise ContractError("weak_node_margin needs a non-empty fan-in weight vector")
    return float(np.abs(w).sum(dtype=np.float64) + float(b))


def node_margins(W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Margins for every row of a dense (out x in) or conv (out x in x 3 x 3) weight."""
    rows = W.reshape(W.shape[0], -1)
    if rows.shape[1] == 0:
        raise ContractError("node_margins needs a non-empty fan-in")
    acc = np.cumsum(np.maximum(rows, 0), axis=1, dtype=rows.dtype)[:, -1]
    return (acc + b.astype(rows.dtype)).astype(np.float64)


def weak_node_margins(W: np.ndarray, b: np.ndarray) -> np.ndarray:
    rows = W.reshape(W.shape[0], -1)
    return np.abs(rows).sum(axis=1, dtype=np.float64) + b.astype(np.float64)


def bn_node_margin(gamma: float, beta_shift: float, m: int) -> float:
    if m < 2:
        raise ContractError(f"bn_node_margin needs m >= 2, got {m}")
    return float(abs(float(gamma)) * np.sqrt(m) + float(beta_shift))


def bn_node_margins(gamma: np.ndarray, beta_shift: np.ndarray, m: int) -> np.ndarray:
    if m < 2:
        raise ContractError(f"bn_node_margins needs m >= 2, got {m}")
    return np.abs(gamma.astype(np.float64)) * np.sqrt(m) + beta_shift.astype(np.float64)


def bn_effective_count(bn_input_shape: tuple, m: int) -> int:
    """Values normalized together per channel: m for dense BN, m*H*W after a conv."""
    return int(m * int(np.prod(bn_input_shape[1:], dtype=np.int64)))
