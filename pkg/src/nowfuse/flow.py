"""Temporal fusion: dense optical flow and motion-compensated frame interpolation.

Flow is estimated with coarse-to-fine iterative Lucas-Kanade on a box-filter
pyramid. The estimate F satisfies next(p + F(p)) ~= prev(p) in textured
regions; pixels whose window-averaged structure tensor is degenerate at the
finest level get zero flow.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid import FlowField, Grid, bilinear_sample


@dataclass(frozen=True)
class FlowParams:
    pyramid_levels: int = 4
    window_radius: int = 7
    iterations_per_level: int = 3
    min_eigen_threshold: float = 1e-4

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if self.iterations_per_level < 1:
            raise ValueError("iterations_per_level must be >= 1")


@dataclass(frozen=True)
class FrameSequence:
    """Ordered (timestamp_minutes, grid) pairs on a common raster."""

    frames: tuple[tuple[float, Grid], ...]

    def __post_init__(self):
        frames = tuple((float(t), g) for t, g in self.frames)
        if not frames:
            raise ValueError("a sequence needs at least one frame")
        times = [t for t, _ in frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("timestamps must be strictly increasing")
        shape = frames[0][1].shape
        if any(g.shape != shape for _, g in frames):
            raise ValueError("all frames must share the same dimensions")
        object.__setattr__(self, "frames", frames)

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.frames]

    def __len__(self) -> int:
        return len(self.frames)


def _downsample2(a: np.ndarray) -> np.ndarray:
    # 2x box filter; odd trailing row/col is edge-replicated before averaging.
    h, w = a.shape
    if h % 2:
        a = np.concatenate([a, a[-1:]], axis=0)
    if w % 2:
        a = np.concatenate([a, a[:, -1:]], axis=1)
    return 0.25 * (a[0::2, 0::2] + a[0::2, 1::2] + a[1::2, 0::2] + a[1::2, 1::2])


def _resize_to(a: np.ndarray, h: int, w: int) -> np.ndarray:
    if a.shape == (h, w):
        return a
    ys = np.full(1, (a.shape[0] - 1) / 2.0) if h == 1 else \
        np.arange(h) * ((a.shape[0] - 1) / (h - 1))
    xs = np.full(1, (a.shape[1] - 1) / 2.0) if w == 1 else \
        np.arange(w) * ((a.shape[1] - 1) / (w - 1))
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(a, yy, xx)


def estimate_flow(prev: Grid, next_: Grid, p: FlowParams = FlowParams()) -> FlowField:
    """Dense displacement from `prev` toward `next_` (pyramidal Lucas-Kanade)."""
    if prev.shape != next_.shape:
        raise ValueError("frame dimensions must match")
    min_side = 2 ** (p.pyramid_levels - 1)
    if prev.height < min_side or prev.width < min_side:
        raise ValueError(
            f"grid {prev.shape} too small for {p.pyramid_levels} pyramid levels"
        )

    pyr_prev = [prev.values.astype(np.float64)]
    pyr_next = [next_.values.astype(np.float64)]
    for _ in range(p.pyramid_levels - 1):
        pyr_prev.append(_downsample2(pyr_prev[-1]))
        pyr_next.append(_downsample2(pyr_next[-1]))

    size = 2 * p.window_radius + 1
    win = dict(size=size, mode="constant", cval=0.0)

    u = np.zeros_like(pyr_prev[-1])
    v = np.zeros_like(pyr_prev[-1])
    for level in range(p.pyramid_levels - 1, -1, -1):
        a = pyr_prev[level]
        b = pyr_next[level]
        h, w = a.shape
        if u.shape != a.shape:
            u = _resize_to(u, h, w) * 2.0
            v = _resize_to(v, h, w) * 2.0

        iy, ix = np.gradient(a)
        sxx = ndimage.uniform_filter(ix * ix, **win)
        sxy = ndimage.uniform_filter(ix * iy, **win)
        syy = ndimage.uniform_filter(iy * iy, **win)
        trace = sxx + syy
        det = sxx * syy - sxy * sxy
        emin = 0.5 * (trace - np.sqrt(np.maximum(trace * trace - 4.0 * det, 0.0)))
        valid = emin >= p.min_eigen_threshold
        safe_det = np.where(valid, det, 1.0)

        yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
        for _ in range(p.iterations_per_level):
            warped = bilinear_sample(b, yy + v, xx + u)
            it = warped - a
            sxt = ndimage.uniform_filter(ix * it, **win)
            syt = ndimage.uniform_filter(iy * it, **win)
            du = (sxy * syt - syy * sxt) / safe_det
            dv = (sxy * sxt - sxx * syt) / safe_det
            u = u + np.where(valid, du, 0.0)
            v = v + np.where(valid, dv, 0.0)

        if level == 0:
            u = np.where(valid, u, 0.0)
            v = np.where(valid, v, 0.0)

    return FlowField(u.astype(np.float32), v.astype(np.float32))


def warp(src: Grid, f: FlowField, scale: float) -> Grid:
    """Backward warp: out(p) = bilinear_sample(src, p + scale * f(p))."""
    if src.shape != f.shape:
        raise ValueError("flow dimensions must match the grid")
    h, w = src.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    ys = yy + scale * f.dy.astype(np.float64)
    xs = xx + scale * f.dx.astype(np.float64)
    return Grid(bilinear_sample(src.values, ys, xs).astype(np.float32))


def interpolate(prev: Grid, next_: Grid, t: float,
                p: FlowParams = FlowParams()) -> Grid:
    """Motion-compensated in-between frame at fraction t of [prev, next]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if prev.shape != next_.shape:
        raise ValueError("frame dimensions must match")
    flow = estimate_flow(prev, next_, p)
    # Content moves along +F from prev to next, so the mid-frame samples prev
    # upstream (-t) and next downstream (+(1-t)).
    a = warp(prev, flow, -t)
    b = warp(next_, flow, 1.0 - t)
    out = (1.0 - t) * a.values.astype(np.float64) + t * b.values.astype(np.float64)
    return Grid(np.clip(out, 0.0, 1.0).astype(np.float32))


def resample_cadence(seq: FrameSequence, step: float,
                     p: FlowParams = FlowParams()) -> FrameSequence:
    """Resample to a fixed cadence: t0, t0+step, ... <= tN.

    Source timestamps pass through unchanged; new timestamps are synthesized
    by interpolating between their bracketing source frames.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if len(seq) < 2:
        raise ValueError("need at least 2 frames to resample")
    times = seq.times
    t0, tn = times[0], times[-1]
    eps = 1e-9 * max(1.0, abs(tn))

    out = []
    k = 0
    while True:
        target = t0 + k * step
        if target > tn + eps:
            break
        k += 1
        j = bisect.bisect_left(times, target - eps)
        if j < len(times) and abs(times[j] - target) <= eps:
            out.append((times[j], seq.frames[j][1]))
            continue
        left = j - 1
        right = j
        lt, lg = seq.frames[left]
        rt, rg = seq.frames[right]
        local_t = (target - lt) / (rt - lt)
        out.append((target, interpolate(lg, rg, local_t, p)))
    return FrameSequence(tuple(out))
