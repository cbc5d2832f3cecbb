"""Fixed-order accumulation kernels.

Every output element is a sum over the reduction axis taken strictly left to
right, starting from 0.0, with no reassociation and no fused multiply-add
(fastmath stays off). Parallelism is over output rows only, so results are
bitwise reproducible and removing a term that is exactly 0.0 never changes an
output value. Compaction relies on this.
"""

from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(parallel=True, cache=True, nogil=True)
def matmul_kernel(a: np.ndarray, b: np.ndarray, out: np.ndarray) -> None:
    m, k_dim = a.shape
    n = b.shape[1]
    for i in nb.prange(m):
        for j in range(n):
            out[i, j] = 0.0
        for k in range(k_dim):
            aik = a[i, k]
            for j in range(n):
                out[i, j] += aik * b[k, j]


@nb.njit(parallel=True, cache=True, nogil=True)
def batched_left_matmul_kernel(w: np.ndarray, x: np.ndarray, out: np.ndarray) -> None:
    """out[n] = w @ x[n] for every n; w is (R, K), x is (N, K, P)."""
    n_batch, k_dim, p_dim = x.shape
    rows = w.shape[0]
    for n in nb.prange(n_batch):
        for r in range(rows):
            for p in range(p_dim):
                out[n, r, p] = 0.0
            for k in range(k_dim):
                wrk = w[r, k]
                for p in range(p_dim):
                    out[n, r, p] += wrk * x[n, k, p]
