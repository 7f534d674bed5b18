"""Inference-only layers on channel-last float64 arrays.

Image tensors are ``(X, Y, Z, C)``, node features are ``(N, C)``. Dense
products go through :func:`matmul`, which splits rows into fixed-size
blocks. Inside :func:`worker_threads` BLAS is single-threaded and the blocks
are spread over a thread pool, so every block sees the same BLAS call and
results do not depend on the thread count.
"""

from __future__ import annotations

import contextvars
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np
from threadpoolctl import threadpool_limits

from ..errors import ShapeMismatch
from ..mesh import ScaledLaplacian

BLOCK_ROWS = 4096
_POOL = contextvars.ContextVar("flowmesh_pool", default=None)


@contextmanager
def worker_threads(n: int | None = None):
    """Single-threaded BLAS plus a pool of ``n`` workers for :func:`matmul`."""
    n = max(1, int(n or 1))
    with threadpool_limits(limits=1), ThreadPoolExecutor(max_workers=n) as pool:
        token = _POOL.set(pool if n > 1 else None)
        try:
            yield
        finally:
            _POOL.reset(token)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` computed in row blocks of :data:`BLOCK_ROWS`."""
    n = a.shape[0]
    if n <= BLOCK_ROWS:
        return a @ b
    out = np.empty((n, b.shape[1]), dtype=np.result_type(a, b))

    def run(start):
        np.matmul(a[start : start + BLOCK_ROWS], b, out=out[start : start + BLOCK_ROWS])

    starts = range(0, n, BLOCK_ROWS)
    pool = _POOL.get()
    if pool is None:
        for start in starts:
            run(start)
    else:
        list(pool.map(run, starts))
    return out


def conv3d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Same-padded 3D convolution (cross-correlation), stride 1.

    ``weight`` is ``(C_out, C_in, k, k, k)`` with odd ``k``. Taps are summed
    one at a time as shifted-slice matrix products.
    """
    cout, cin, k = weight.shape[0], weight.shape[1], weight.shape[2]
    if x.shape[-1] != cin:
        raise ShapeMismatch(f"conv expects {cin} input channels, got {x.shape[-1]}")
    X, Y, Z = x.shape[:3]
    # (k, k, k, C_in, C_out), contiguous so every tap is a BLAS operand
    w = np.ascontiguousarray(np.transpose(np.asarray(weight, dtype=np.float64), (2, 3, 4, 1, 0)))
    if k == 1:
        out = matmul(x.reshape(-1, cin), w[0, 0, 0]).reshape(X, Y, Z, cout)
    else:
        r = k // 2
        xp = np.pad(x, ((r, r), (r, r), (r, r), (0, 0)))
        out = np.zeros((X, Y, Z, cout))
        for a in range(k):
            for b in range(k):
                for c in range(k):
                    tap = np.ascontiguousarray(xp[a : a + X, b : b + Y, c : c + Z])
                    out += matmul(tap.reshape(-1, cin), w[a, b, c]).reshape(X, Y, Z, cout)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)
    return out


def instance_norm(x: np.ndarray, scale, shift, eps: float = 1e-5, axes=None) -> np.ndarray:
    """Per-channel standardization over all non-channel axes, then affine.

    A constant channel maps to ``shift`` since its centered values vanish
    and the denominator is regularized by ``eps``.
    """
    if axes is None:
        axes = tuple(range(x.ndim - 1))
    mean = x.mean(axis=axes, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=axes, keepdims=True)
    return xc / np.sqrt(var + eps) * np.asarray(scale, dtype=np.float64) + np.asarray(shift, dtype=np.float64)


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def maxpool2(x: np.ndarray) -> np.ndarray:
    X, Y, Z, C = x.shape
    if X % 2 or Y % 2 or Z % 2:
        raise ShapeMismatch(f"maxpool needs even sides, got {x.shape[:3]}")
    return x.reshape(X // 2, 2, Y // 2, 2, Z // 2, 2, C).max(axis=(1, 3, 5))


def cheb_conv(lap, x, w0, w1, bias=None) -> np.ndarray:
    """First-order Chebyshev graph convolution ``X W0 + (L X) W1 + b``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    w0 = np.asarray(w0, dtype=np.float64)
    w1 = np.asarray(w1, dtype=np.float64)
    if w0.ndim == 1:
        w0 = w0.reshape(1, -1)
    if w1.ndim == 1:
        w1 = w1.reshape(1, -1)
    n = lap.n if isinstance(lap, ScaledLaplacian) else lap.shape[0]
    if x.shape[0] != n:
        raise ShapeMismatch(f"{x.shape[0]} node rows for a {n}-node Laplacian")
    if w0.shape != w1.shape or w0.shape[0] != x.shape[1]:
        raise ShapeMismatch(f"weights {w0.shape}/{w1.shape} do not fit features {x.shape}")
    lx = lap @ x
    y = matmul(x, w0) + matmul(np.asarray(lx), w1)
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (w0.shape[1],):
            raise ShapeMismatch(f"bias shape {bias.shape} does not match {w0.shape[1]} outputs")
        y = y + bias
    return y
