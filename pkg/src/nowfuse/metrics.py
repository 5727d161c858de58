"""Quality metrics: PSNR, SSIM, and a seam-energy proxy for blend artifacts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .blend import AlphaMap
from .grid import Grid

PSNR_CAP_DB = 100.0


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0 or self.data_range <= 0:
            raise ValueError("sigma and data_range must be positive")
        if self.window_size % 2 == 0 or self.window_size < 3:
            raise ValueError("window_size must be odd and >= 3")


def psnr(a: Grid, b: Grid, data_range: float = 1.0) -> float:
    """10*log10(range^2 / MSE); identical inputs report the 100 dB cap."""
    if a.shape != b.shape:
        raise ValueError("grid dimensions must match")
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    diff = a.values.astype(np.float64) - b.values.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(data_range * data_range / mse), PSNR_CAP_DB)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: Grid, b: Grid, p: SsimParams = SsimParams()) -> float:
    """Mean local SSIM with a Gaussian window, evaluated on the valid interior."""
    if a.shape != b.shape:
        raise ValueError("grid dimensions must match")
    half = p.window_size // 2
    if a.height < p.window_size or a.width < p.window_size:
        raise ValueError(f"grid smaller than the {p.window_size}x{p.window_size} window")

    kern = _gaussian_kernel(p.window_size, p.sigma)
    av = a.values.astype(np.float64)
    bv = b.values.astype(np.float64)

    def smooth(f):
        return ndimage.correlate(f, kern, mode="constant")[half:-half, half:-half]

    mu_a = smooth(av)
    mu_b = smooth(bv)
    var_a = smooth(av * av) - mu_a * mu_a
    var_b = smooth(bv * bv) - mu_b * mu_b
    cov = smooth(av * bv) - mu_a * mu_b

    c1 = (p.k1 * p.data_range) ** 2
    c2 = (p.k2 * p.data_range) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def seam_energy(g: Grid, band: AlphaMap) -> float:
    """Mean squared radial finite-difference of g over pixels where band < 1.

    The radial direction at a pixel is the band map's own gradient direction;
    where that gradient vanishes (band centerline) the full gradient
    magnitude is used instead.
    """
    if g.shape != band.shape:
        raise ValueError("grid and band dimensions must match")
    sel = band.values < 1.0
    if not sel.any():
        raise ValueError("band selects no pixels (all values are 1)")
    gy, gx = np.gradient(g.values.astype(np.float64))
    by, bx = np.gradient(band.values.astype(np.float64))
    bn = np.hypot(bx, by)
    grad_mag = np.hypot(gx, gy)
    with np.errstate(invalid="ignore", divide="ignore"):
        radial = np.where(bn > 1e-12, (gx * bx + gy * by) / np.where(bn > 0, bn, 1.0),
                          grad_mag)
    return float(np.mean(radial[sel] ** 2))
