"""Forward/backward pairs for the layers of the backbone.

Every ``*_backward`` returns gradients of a scalar loss with respect to the
layer inputs (and parameters) given the upstream gradient of its output.
Sequence tensors use the (batch, length, channels) layout.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def dense_forward(x, w, b):
    return x @ w + b


def dense_backward(dout, x, w):
    """Returns (dx, dw, db)."""
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    return dout * (x > 0)


def _im2col(x, k):
    # (N, L, C) -> (N, L, k*C), zero "same" padding
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, k, axis=1)  # (N, L, C, k)
    n, length, c, _ = win.shape
    return win.transpose(0, 1, 3, 2).reshape(n, length, k * c)


def conv1d_forward(x, w, b):
    """Same-padded stride-1 1-D convolution.

    x: (N, L, Cin); w: (k, Cin, Cout); b: (Cout,). Returns (N, L, Cout).
    """
    k, cin, cout = w.shape
    cols = _im2col(x, k)
    return cols @ w.reshape(k * cin, cout) + b


def conv1d_backward(dout, x, w):
    """Returns (dx, dw, db)."""
    k, cin, cout = w.shape
    n, length, _ = x.shape
    cols = _im2col(x, k).reshape(n * length, k * cin)
    d2 = dout.reshape(n * length, cout)
    dw = (cols.T @ d2).reshape(k, cin, cout)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(k * cin, cout).T).reshape(n, length, k, cin)
    pad = k // 2
    dxp = np.zeros((n, length + 2 * pad, cin), dtype=dout.dtype)
    for j in range(k):
        dxp[:, j : j + length, :] += dcols[:, :, j, :]
    return dxp[:, pad : pad + length, :], dw, db


def avgpool_forward(x):
    # global average over the length axis
    return x.mean(axis=1)


def avgpool_backward(dout, length):
    return np.repeat(dout[:, None, :] / length, length, axis=1)


def dropout_mask(rng: np.random.Generator, shape, rate: float, dtype=np.float64):
    """Inverted-dropout mask: Bernoulli(1 - rate) keeps, scaled by 1/(1 - rate)."""
    if rate == 0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def l2normalize_forward(v, eps: float = 1e-12):
    norm = np.sqrt((v * v).sum(axis=1, keepdims=True))
    return v / np.maximum(norm, eps), norm


def l2normalize_backward(dout, v, norm, eps: float = 1e-12):
    # d(v/|v|) = (I/|v| - v v^T/|v|^3) g
    norm = np.maximum(norm, eps)
    proj = (v * dout).sum(axis=1, keepdims=True)
    return dout / norm - v * proj / norm**3


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(dprobs, probs):
    inner = (dprobs * probs).sum(axis=1, keepdims=True)
    return probs * (dprobs - inner)
