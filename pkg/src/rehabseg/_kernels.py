"""Fused row-softmax kernels.

The attention weights live in [batch*heads*T, T] matrices that dominate
training time, so the scale/shift/exp/normalize chain is fused into a
single pass per row.  numba supplies the parallel version; the numpy
fallback computes the identical result (used when numba is unavailable or
disabled via REHABSEG_NO_NUMBA, and by tests as a cross-check).

Rows are independent and each row is reduced sequentially by one thread,
so the parallel kernels are bitwise deterministic.
"""

from __future__ import annotations

import os

import numpy as np

_use_numba = os.environ.get("REHABSEG_NO_NUMBA", "") == ""

if _use_numba:
    try:
        # skip the TBB probe; the omp layer is always present here and the
        # kernels only need deterministic row-parallelism
        os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
        import numba as nb
    except ImportError:  # pragma: no cover
        _use_numba = False


def _softmax_fwd_np(scores: np.ndarray, scale: float) -> np.ndarray:
    z = scores * scale
    z -= z.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def _softmax_bwd_np(probs: np.ndarray, grad: np.ndarray, scale: float) -> np.ndarray:
    inner = (probs * grad).sum(axis=-1, keepdims=True)
    return probs * (grad - inner) * scale


if _use_numba:

    @nb.njit(parallel=True, cache=True)
    def _softmax_fwd_nb(scores, scale):  # pragma: no cover - numba
        n, m = scores.shape
        out = np.empty_like(scores)
        for i in nb.prange(n):
            mx = -np.inf
            for j in range(m):
                v = scores[i, j] * scale
                if v > mx:
                    mx = v
            total = 0.0
            for j in range(m):
                e = np.exp(scores[i, j] * scale - mx)
                out[i, j] = e
                total += e
            inv = 1.0 / total
            for j in range(m):
                out[i, j] *= inv
        return out

    @nb.njit(parallel=True, cache=True)
    def _softmax_bwd_nb(probs, grad, scale):  # pragma: no cover - numba
        n, m = probs.shape
        out = np.empty_like(probs)
        for i in nb.prange(n):
            inner = 0.0
            for j in range(m):
                inner += probs[i, j] * grad[i, j]
            for j in range(m):
                out[i, j] = probs[i, j] * (grad[i, j] - inner) * scale
        return out


def softmax_rows(scores: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``scores * scale`` along the last axis."""
    if _use_numba and scores.size >= 1 << 16:
        flat = np.ascontiguousarray(scores.reshape(-1, scores.shape[-1]))
        return _softmax_fwd_nb(flat, float(scale)).reshape(scores.shape)
    return _softmax_fwd_np(scores, float(scale))


def softmax_rows_vjp(probs: np.ndarray, grad: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Gradient of softmax_rows w.r.t. its ``scores`` argument."""
    if _use_numba and probs.size >= 1 << 16:
        flat_p = np.ascontiguousarray(probs.reshape(-1, probs.shape[-1]))
        flat_g = np.ascontiguousarray(grad.reshape(-1, grad.shape[-1]))
        return _softmax_bwd_nb(flat_p, flat_g, float(scale)).reshape(probs.shape)
    return _softmax_bwd_np(probs, grad, float(scale))
