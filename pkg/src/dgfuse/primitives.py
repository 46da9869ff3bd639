"""Network primitives with explicit forward and backward passes.

Everything is float64 on CPU. Convolutions are valid (no padding), stride 1,
with kernels of height 1 sliding along the time axis; pooling is
non-overlapping max along time, truncating any remainder.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_forward(x, w, b):
    """x: (n, c_in, rows, width); w: (c_out, c_in, k); b: (c_out,).
    Returns (n, c_out, rows, width - k + 1)."""
    if x.ndim != 4:
        raise ValueError(f"conv: input must be 4-D, got shape {x.shape}")
    if w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv: weight {w.shape} incompatible with input {x.shape}")
    k = w.shape[2]
    if k > x.shape[3]:
        raise ValueError(f"conv: kernel width {k} exceeds input width {x.shape[3]}")
    xs = sliding_window_view(x, k, axis=3)  # (n, c_in, rows, w_out, k)
    out = np.einsum("ncrwk,ock->norw", xs, w, optimize=True)
    return out + b[None, :, None, None]


def conv_backward(g, x, w):
    """Gradients of conv_forward: returns (dx, dw, db) for upstream g of
    shape (n, c_out, rows, w_out)."""
    k = w.shape[2]
    w_out = g.shape[3]
    xs = sliding_window_view(x, k, axis=3)
    dw = np.einsum("norw,ncrwk->ock", g, xs, optimize=True)
    db = g.sum(axis=(0, 2, 3))
    dx = np.zeros_like(x)
    for t in range(k):
        dx[:, :, :, t:t + w_out] += np.einsum("norw,oc->ncrw", g, w[:, :, t], optimize=True)
    return dx, dw, db


def maxpool_forward(x, width: int):
    """Non-overlapping max along the last axis; remainder timesteps dropped.
    Returns (out, argmax) with argmax the within-chunk winner (first on ties)."""
    if width < 1:
        raise ValueError("maxpool: width must be >= 1")
    length = x.shape[-1]
    chunks = length // width
    if chunks < 1:
        raise ValueError(f"maxpool: input width {length} shorter than pool width {width}")
    xr = x[..., : chunks * width].reshape(*x.shape[:-1], chunks, width)
    idx = xr.argmax(axis=-1)
    out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool_backward(g, idx, width: int, in_len: int):
    """Route upstream gradient to the argmax positions only."""
    chunks = g.shape[-1]
    dxr = np.zeros((*g.shape[:-1], chunks, width))
    np.put_along_axis(dxr, idx[..., None], g[..., None], axis=-1)
    dx = np.zeros((*g.shape[:-1], in_len))
    dx[..., : chunks * width] = dxr.reshape(*g.shape[:-1], chunks * width)
    return dx


def dense_forward(x, w, b):
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"dense: input {x.shape} incompatible with weight {w.shape}")
    return x @ w + b


def dense_backward(g, x, w):
    return g @ w.T, x.T @ g, g.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(g, x):
    return np.where(x > 0.0, g, 0.0)


def softmax(x):
    """Row-wise softmax along the last axis, max-subtracted for stability.
    Rows sum to 1 up to float64 roundoff."""
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(g, p):
    """VJP of softmax: p * (g - sum(g * p))."""
    return p * (g - np.sum(g * p, axis=-1, keepdims=True))
