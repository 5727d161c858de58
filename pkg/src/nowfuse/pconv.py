"""Partial convolution with binary or soft confidence masks.

Forward rule per output location, with the single-channel mask broadcast
across input channels and sum(M) taken over the spatial window only:

    y = (1 / sum(M)) * W^T (X * M) + b    if sum(M) > 0
    y = 0                                 otherwise

Mask update: binary mode propagates the indicator of sum(M) > 0; soft mode
propagates 1 where the window max equals 1 and the window's center mask
value otherwise. Masks never carry gradients.

Internals use a channel-first (C, B, H, W) layout. Stride-1 convolutions
run as k*k full-plane GEMMs accumulated through flat row shifts (exact
because the zero-padded margins absorb every boundary crossing); strided
convolutions fall back to an explicit window matrix. Padded-plane flats
are (C, B*Hp*Wp) with spatial position fastest, so a kernel offset (u, v)
is the constant flat shift u*Wp + v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import MaskGrid, Tensor4

MASK_MODES = ("binary", "soft")


@dataclass(frozen=True, eq=False)
class PConvLayer:
    """Parameters of one partial-convolution layer."""

    weights: np.ndarray  # (out_ch, in_ch, kh, kw)
    bias: np.ndarray     # (out_ch,)
    stride: int = 1
    padding: int = 0
    mask_mode: str = "soft"

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights)
        b = np.ascontiguousarray(self.bias)
        if w.ndim != 4:
            raise ValueError(f"weights must be 4-D, got shape {w.shape}")
        kh, kw = w.shape[2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("kernel dimensions must be odd")
        if b.shape != (w.shape[0],):
            raise ValueError("bias shape must be (out_ch,)")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.padding < 0:
            raise ValueError("padding must be >= 0")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("layer parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]

    def astype(self, dtype) -> "PConvLayer":
        return PConvLayer(self.weights.astype(dtype), self.bias.astype(dtype),
                          self.stride, self.padding, self.mask_mode)


def mask_update_binary(window: np.ndarray) -> float:
    """Next-layer mask value for one window of binary mask values."""
    w = np.asarray(window)
    return 1.0 if (w > 0).any() else 0.0


def mask_update_soft(window: np.ndarray, center: float) -> float:
    """Next-layer mask value for one window of soft mask values."""
    w = np.asarray(window)
    return 1.0 if w.max() == 1.0 else float(center)


def _out_size(n: int, k: int, stride: int, padding: int) -> int:
    span = n + 2 * padding - k
    if span < 0:
        raise ValueError(f"kernel {k} larger than padded input {n + 2 * padding}")
    return span // stride + 1


def _pad_cbhw(a: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return np.ascontiguousarray(a)
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col_cbhw(xp: np.ndarray, kh: int, kw: int, s: int) -> np.ndarray:
    """(C, B, Hp, Wp) -> (C*kh*kw, B*L) window matrix (strided path)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::s, ::s]
    c, b, ho, wo = win.shape[:4]
    cols = win.transpose(0, 4, 5, 1, 2, 3).reshape(c * kh * kw, b * ho * wo)
    return np.ascontiguousarray(cols)


class _LayerCache:
    __slots__ = ("xmf", "cols", "norm", "validf", "m_pad", "in_shape",
                 "pad_shape", "out_hw")

    def __init__(self, xmf, cols, norm, validf, m_pad, in_shape, pad_shape, out_hw):
        self.xmf = xmf            # (C, T) flat of x_pad * m_pad (stride-1 path)
        self.cols = cols          # (C*kh*kw, B*L) window matrix (strided path)
        self.norm = norm          # (1, B, Ho, Wo) 1/sum(M) where valid else 0
        self.validf = validf      # (1, B, Ho, Wo) 1.0 where sum(M) > 0
        self.m_pad = m_pad
        self.in_shape = in_shape
        self.pad_shape = pad_shape
        self.out_hw = out_hw


def _mask_stats(m_pad: np.ndarray, kh: int, kw: int, s: int, ho: int, wo: int,
                need_max: bool):
    """Window sums (and maxima) of the padded single-channel mask."""
    _, b, hp, wp = m_pad.shape
    if s == 1:
        mf = m_pad.reshape(-1)
        t = mf.size
        msum = np.zeros(t, mf.dtype)
        mmax = np.zeros(t, mf.dtype) if need_max else None
        for u in range(kh):
            for v in range(kw):
                off = u * wp + v
                src = mf[off:] if off else mf
                msum[:t - off] += src
                if need_max:
                    np.maximum(mmax[:t - off], src, out=mmax[:t - off])
        msum = msum.reshape(b, hp, wp)[:, :ho, :wo]
        if need_max:
            mmax = mmax.reshape(b, hp, wp)[:, :ho, :wo]
        return msum, mmax
    mcols = _im2col_cbhw(m_pad, kh, kw, s)
    msum = mcols.sum(axis=0).reshape(b, ho, wo)
    mmax = mcols.max(axis=0).reshape(b, ho, wo) if need_max else None
    return msum, mmax


def pconv_forward_raw(x: np.ndarray, m: np.ndarray, layer: PConvLayer,
                      want_cache: bool = False):
    """Channel-first forward pass.

    x is (C, B, H, W); m is (1, B, H, W) (or (1, 1, H, W), broadcast over
    the batch) and shares x's dtype. Returns (y, m_next) plus the backward
    cache when requested.
    """
    c, b, h, w = x.shape
    if m.shape[0] != 1 or m.shape[2:] != (h, w) or m.shape[1] not in (1, b):
        raise ValueError(f"mask shape {m.shape} incompatible with input {x.shape}")
    if layer.in_channels != c:
        raise ValueError(f"layer expects {layer.in_channels} channels, got {c}")
    if m.shape[1] == 1 and b > 1:
        m = np.broadcast_to(m, (1, b, h, w))
    kh, kw = layer.kernel
    s, p = layer.stride, layer.padding
    ho = _out_size(h, kh, s, p)
    wo = _out_size(w, kw, s, p)
    wt = layer.weights.astype(x.dtype, copy=False)
    bias = layer.bias.astype(x.dtype, copy=False)
    cout = layer.out_channels

    m_pad = _pad_cbhw(m, p)
    x_pad = _pad_cbhw(x, p)
    xm = x_pad * m_pad
    hp, wp = h + 2 * p, w + 2 * p

    xmf = cols = None
    if s == 1:
        xmf = xm.reshape(c, -1)
        t = xmf.shape[1]
        acc = np.zeros((cout, t), x.dtype)
        res = np.empty((cout, t), x.dtype)
        wk = np.ascontiguousarray(wt.transpose(2, 3, 0, 1))  # (kh, kw, cout, c)
        for u in range(kh):
            for v in range(kw):
                off = u * wp + v
                np.matmul(wk[u, v], xmf, out=res)
                if off:
                    acc[:, :t - off] += res[:, off:]
                else:
                    acc += res
        raw = acc.reshape(cout, b, hp, wp)[:, :, :ho, :wo]
    else:
        cols = _im2col_cbhw(xm, kh, kw, s)
        raw = (wt.reshape(cout, -1) @ cols).reshape(cout, b, ho, wo)

    need_max = layer.mask_mode == "soft"
    msum, mmax = _mask_stats(m_pad, kh, kw, s, ho, wo, need_max)
    valid = msum > 0
    validf = valid.astype(x.dtype)[None]
    norm = np.where(valid, 1.0 / np.where(valid, msum, 1.0), 0.0).astype(x.dtype)[None]

    y = raw * norm
    y += bias[:, None, None, None] * validf
    y = np.ascontiguousarray(y)

    if layer.mask_mode == "binary":
        m_next = validf.copy()
    else:
        ch, cw = (kh - 1) // 2, (kw - 1) // 2
        centers = m_pad[:, :, ch:ch + s * ho:s, cw:cw + s * wo:s]
        m_next = np.where(mmax[None] == 1.0, x.dtype.type(1.0), centers)
    m_next = np.ascontiguousarray(m_next)

    if not want_cache:
        return y, m_next
    cache = _LayerCache(xmf, cols, norm, validf, m_pad,
                        (c, b, h, w), (hp, wp), (ho, wo))
    return y, m_next, cache


def pconv_backward_raw(dy: np.ndarray, layer: PConvLayer, cache: _LayerCache):
    """Gradients w.r.t. (x, W, b) given d(loss)/dy, channel-first layout.

    The mask pathway is constant: neither m nor m_next receive gradients.
    """
    c, b, h, w = cache.in_shape
    hp, wp = cache.pad_shape
    ho, wo = cache.out_hw
    kh, kw = layer.kernel
    s, p = layer.stride, layer.padding
    cout = layer.out_channels
    wt = layer.weights.astype(dy.dtype, copy=False)

    draw = dy * cache.norm
    db = (dy * cache.validf).sum(axis=(1, 2, 3))

    if s == 1:
        t = b * hp * wp
        dy_pad = np.zeros((cout, b, hp, wp), dy.dtype)
        dy_pad[:, :, :ho, :wo] = draw
        dypf = dy_pad.reshape(cout, t)
        xmf = cache.xmf
        wk = np.ascontiguousarray(wt.transpose(2, 3, 0, 1))
        dw = np.empty_like(wt)
        dxmf = np.zeros((c, t), dy.dtype)
        res = np.empty((c, t), dy.dtype)
        for u in range(kh):
            for v in range(kw):
                off = u * wp + v
                if off:
                    dw[:, :, u, v] = dypf[:, :t - off] @ xmf[:, off:].T
                else:
                    dw[:, :, u, v] = dypf @ xmf.T
                np.matmul(wk[u, v].T, dypf, out=res)
                if off:
                    dxmf[:, off:] += res[:, :t - off]
                else:
                    dxmf += res
        dxm_pad = dxmf.reshape(c, b, hp, wp)
    else:
        dy_flat = draw.reshape(cout, -1)
        dw = (dy_flat @ cache.cols.T).reshape(cout, c, kh, kw)
        dcols = wt.reshape(cout, -1).T @ dy_flat
        d = dcols.reshape(c, kh, kw, b, ho, wo)
        dxm_pad = np.zeros((c, b, hp, wp), dy.dtype)
        for u in range(kh):
            for v in range(kw):
                dxm_pad[:, :, u:u + s * ho:s, v:v + s * wo:s] += d[:, u, v]

    dx_pad = dxm_pad * cache.m_pad
    dx = dx_pad[:, :, p:p + h, p:p + w] if p else dx_pad
    return np.ascontiguousarray(dx), dw, db


def pconv_forward(x: Tensor4, m: MaskGrid, layer: PConvLayer):
    """Typed forward pass; the mask applies to every batch item.

    Returns (y: Tensor4, m_next: MaskGrid).
    """
    xv = x.values
    if m.shape != xv.shape[2:]:
        raise ValueError("mask dimensions must match the input spatial dimensions")
    mv = m.values.astype(xv.dtype)[None, None]
    if layer.mask_mode == "binary":
        frac = (mv != 0.0) & (mv != 1.0)
        if frac.any():
            raise ValueError("binary mask mode requires mask values in {0, 1}")
    y, m_next = pconv_forward_raw(np.ascontiguousarray(xv.transpose(1, 0, 2, 3)),
                                  mv, layer)
    return (Tensor4(np.ascontiguousarray(y.transpose(1, 0, 2, 3))),
            MaskGrid(m_next[0, 0].astype(np.float32)))
