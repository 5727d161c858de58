"""Spatial fusion preprocessing: alpha maps, blending, and band corruption.

Two alpha conventions exist side by side. The inference map ramps 1 -> 0
across the annulus [R-w, R] of each radar and drives the composite
alpha * I1 + (1 - alpha) * I2. The training map is 1 outside that band,
0 on its centerline, and linear in between; it drives the corruption
|1-2a| * I + (1-|1-2a|) * N and the confidence masks fed to the network.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .grid import Grid, MaskGrid
from .rng import make_rng

AlphaMap = MaskGrid

_NOISE_KINDS = ("uniform", "gaussian-smoothed")


@dataclass(frozen=True)
class CoverageGeometry:
    """Radar discs (cx, cy, radius) in pixels plus the blend ramp width."""

    radars: tuple[tuple[float, float, float], ...]
    ramp_width: float

    def __post_init__(self):
        radars = tuple((float(x), float(y), float(r)) for x, y, r in self.radars)
        if not radars:
            raise ValueError("at least one radar is required")
        if any(r <= 0 for _, _, r in radars):
            raise ValueError("radar radius must be positive")
        if not 0 < self.ramp_width < min(r for _, _, r in radars):
            raise ValueError("ramp_width must satisfy 0 < w < radius")
        object.__setattr__(self, "radars", radars)
        object.__setattr__(self, "ramp_width", float(self.ramp_width))


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "uniform"
    seed: int = 0
    smooth_sigma: float = 3.0

    def __post_init__(self):
        if self.kind not in _NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {_NOISE_KINDS}")
        if self.kind == "gaussian-smoothed" and self.smooth_sigma <= 0:
            raise ValueError("smooth_sigma must be positive")


def _distance_fields(cov: CoverageGeometry, h: int, w: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    return np.stack([np.hypot(xx - cx, yy - cy) for cx, cy, _ in cov.radars])


def build_alpha_inference(cov: CoverageGeometry, h: int, w: int) -> AlphaMap:
    """Per radar: 1 inside d <= R-w, 0 outside d >= R, linear in between; max-combined."""
    d = _distance_fields(cov, h, w)
    radii = np.array([r for _, _, r in cov.radars])[:, None, None]
    a = np.clip((radii - d) / cov.ramp_width, 0.0, 1.0)
    return AlphaMap(a.max(axis=0).astype(np.float32))


def build_alpha_training(band_geometry: CoverageGeometry, h: int, w: int) -> AlphaMap:
    """0 on each band centerline (d = R-w/2), 1 outside the band, linear in between.

    Multiple bands combine by per-pixel min: a pixel inside any band is
    treated as corrupted.
    """
    d = _distance_fields(band_geometry, h, w)
    radii = np.array([r for _, _, r in band_geometry.radars])[:, None, None]
    half = band_geometry.ramp_width / 2.0
    a = np.clip(np.abs(d - (radii - half)) / half, 0.0, 1.0)
    return AlphaMap(a.min(axis=0).astype(np.float32))


def coverage_mask(cov: CoverageGeometry, h: int, w: int) -> np.ndarray:
    """Boolean array, True where any radar covers the pixel (d <= R)."""
    d = _distance_fields(cov, h, w)
    radii = np.array([r for _, _, r in cov.radars])[:, None, None]
    return (d <= radii).any(axis=0)


def alpha_blend(i1: Grid, i2: Grid, a: AlphaMap) -> Grid:
    """Composite: alpha * i1 + (1 - alpha) * i2."""
    if i1.shape != i2.shape or i1.shape != a.shape:
        raise ValueError("grid and alpha dimensions must match")
    av = a.values.astype(np.float64)
    out = av * i1.values.astype(np.float64) + (1.0 - av) * i2.values.astype(np.float64)
    return Grid(out.astype(np.float32))


def corrupt(i: Grid, a: AlphaMap, n: Grid) -> Grid:
    """Training corruption: |1-2a| * i + (1 - |1-2a|) * n."""
    if i.shape != a.shape or i.shape != n.shape:
        raise ValueError("grid, alpha, and noise dimensions must match")
    nv = n.values
    if nv.min() < 0.0 or nv.max() > 1.0:
        raise ValueError("noise values must lie in [0, 1]")
    c = np.abs(1.0 - 2.0 * a.values.astype(np.float64))
    out = c * i.values.astype(np.float64) + (1.0 - c) * nv.astype(np.float64)
    return Grid(out.astype(np.float32))


def noise_field(spec: NoiseSpec, h: int, w: int) -> Grid:
    """Deterministic noise field in [0, 1] for the given spec and dimensions."""
    rng = make_rng(spec.seed, 11)
    if spec.kind == "uniform":
        return Grid(rng.random((h, w), dtype=np.float32))
    u = rng.random((h, w))
    f = ndimage.gaussian_filter(u, sigma=spec.smooth_sigma, mode="reflect")
    lo, hi = f.min(), f.max()
    if hi <= lo:
        return Grid(np.zeros((h, w), dtype=np.float32))
    return Grid(((f - lo) / (hi - lo)).astype(np.float32))


def inference_mask(a: AlphaMap, mode: str) -> MaskGrid:
    """Confidence mask from a training-style alpha map.

    Outside the band (alpha == 1) the mask is 1. Band pixels get 0 (binary),
    0.5 (semi), or the alpha value itself (alpha).
    """
    av = a.values
    outside = av == 1.0
    if mode == "binary":
        m = np.where(outside, 1.0, 0.0)
    elif mode == "semi":
        m = np.where(outside, 1.0, 0.5)
    elif mode == "alpha":
        m = av.copy()
    else:
        raise ValueError("mode must be one of binary, semi, alpha")
    return MaskGrid(m.astype(np.float32))


def jitter_geometry(base: CoverageGeometry, seed: int, stream: int,
                    h: int, w: int, amount: float = 0.2) -> CoverageGeometry:
    """Randomly perturb radar centers and radii by up to +-amount (relative)."""
    rng = make_rng(seed, 23, stream)
    radars = []
    for cx, cy, r in base.radars:
        jx = cx + (2.0 * rng.random() - 1.0) * amount * w
        jy = cy + (2.0 * rng.random() - 1.0) * amount * h
        jr = r * (1.0 + (2.0 * rng.random() - 1.0) * amount)
        radars.append((jx, jy, jr))
    return replace(base, radars=tuple(radars))


def parse_coverage(path) -> CoverageGeometry:
    """Read a coverage file: header line `ramp <w>`, then `cx cy radius` lines."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("ramp"):
        raise ValueError(f"{path}: first line must be `ramp <width>`")
    parts = lines[0].split()
    if len(parts) != 2:
        raise ValueError(f"{path}: malformed ramp header")
    ramp = float(parts[1])
    radars = []
    for ln in lines[1:]:
        fields = ln.split()
        if len(fields) != 3:
            raise ValueError(f"{path}: expected `cx cy radius`, got {ln!r}")
        radars.append(tuple(float(v) for v in fields))
    return CoverageGeometry(tuple(radars), ramp)


def write_coverage(cov: CoverageGeometry, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"ramp {cov.ramp_width}\n")
        for cx, cy, r in cov.radars:
            fh.write(f"{cx} {cy} {r}\n")
