"""Finite-difference verification helpers.

Central differences in float64; used by the test-suite to check every
hand-written backward pass and both regularizers.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import structlog

log = structlog.get_logger()


def central_difference(
    func: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-6
) -> np.ndarray:
    """Gradient of scalar ``func`` at ``x`` by central differences.

    ``x`` is perturbed in place and restored; it should be float64.
    """
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    grad_flat = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        f_plus = func(x)
        flat[j] = orig - eps
        f_minus = func(x)
        flat[j] = orig
        grad_flat[j] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """||a - n|| / max(||a|| + ||n||, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(float(np.linalg.norm(a) + np.linalg.norm(n)), floor)
    err = float(np.linalg.norm(a - n)) / denom
    if err > 1e-4:
        log.debug("gradcheck_mismatch", rel_error=err, size=int(a.size))
    return err
