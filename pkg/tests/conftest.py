"""Shared oracles: naive reference implementations kept independent of the
library's vectorized code paths."""

import numpy as np
import pytest


def naive_conv2d(x, w, b=None, stride=1, padding=1, dilation=1):
    """Quadruple-loop convolution; the definition the fast path must match."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    xp = np.zeros((n, cin, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    out = np.zeros((n, cout, ho, wo))
    for ni in range(n):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += w[co, ci, u, v] * xp[ni, ci, i * stride + u * dilation,
                                                            j * stride + v * dilation]
                    out[ni, co, i, j] = acc + (b[co] if b is not None else 0.0)
    return out


def naive_scdf_apply(x, spatial, channel):
    """Per-pixel loop over the dynamic-filter definition, k odd, same shape."""
    n, c, h, w = x.shape
    k = spatial.shape[2]
    pad = k // 2
    if channel.ndim == 3:
        channel = np.broadcast_to(channel, (n,) + channel.shape)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + w] = x
    out = np.zeros_like(x)
    for ni in range(n):
        for m in range(c):
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for u in range(k):
                        for v in range(k):
                            acc += (spatial[ni, 0, u, v, i, j] * channel[ni, m, u, v]
                                    * xp[ni, m, i + u, j + v])
                    out[ni, m, i, j] = acc
    return out


def naive_matmul(a, b):
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def dilate_kernel(w, dilation):
    """Zero-stuff a dense kernel so a dilated conv equals a dense conv."""
    cout, cin, kh, kw = w.shape
    dh = dilation * (kh - 1) + 1
    dw = dilation * (kw - 1) + 1
    out = np.zeros((cout, cin, dh, dw))
    out[:, :, ::dilation, ::dilation] = w
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(0)
