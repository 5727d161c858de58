"""Shared test helpers: independent oracles kept deliberately naive."""

from __future__ import annotations

import numpy as np
import pytest

from nowfuse.pconv import PConvLayer


def naive_pconv(x: np.ndarray, m: np.ndarray, layer: PConvLayer):
    """Per-window double-loop reference for the partial convolution.

    x: (B, Cin, H, W); m: (H, W) shared across the batch. Returns
    (y, m_next) computed straight from the definition, one window at a
    time, with no shared code with the library implementation.
    """
    b, cin, h, w = x.shape
    kh, kw = layer.kernel
    s, p = layer.stride, layer.padding
    wt = layer.weights.astype(np.float64)
    bias = layer.bias.astype(np.float64)
    ho = (h + 2 * p - kh) // s + 1
    wo = (w + 2 * p - kw) // s + 1

    xp = np.zeros((b, cin, h + 2 * p, w + 2 * p))
    xp[:, :, p:p + h, p:p + w] = x
    mp = np.zeros((h + 2 * p, w + 2 * p))
    mp[p:p + h, p:p + w] = m

    y = np.zeros((b, layer.out_channels, ho, wo))
    m_next = np.zeros((ho, wo))
    for i in range(ho):
        for j in range(wo):
            mw = mp[i * s:i * s + kh, j * s:j * s + kw]
            ms = mw.sum()
            for bi in range(b):
                xw = xp[bi, :, i * s:i * s + kh, j * s:j * s + kw]
                if ms > 0:
                    for oc in range(layer.out_channels):
                        y[bi, oc, i, j] = (wt[oc] * (xw * mw)).sum() / ms + bias[oc]
            if layer.mask_mode == "binary":
                m_next[i, j] = 1.0 if ms > 0 else 0.0
            else:
                center = mp[i * s + (kh - 1) // 2, j * s + (kw - 1) // 2]
                m_next[i, j] = 1.0 if mw.max() == 1.0 else center
    return y, m_next


def rel_err(a: float, fd: float) -> float:
    return abs(a - fd) / max(abs(a) + abs(fd), 1e-6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
