import math

import numpy as np
import pytest

from nowfuse.blend import AlphaMap, CoverageGeometry, build_alpha_training
from nowfuse.grid import Grid
from nowfuse.metrics import PSNR_CAP_DB, SsimParams, psnr, seam_energy, ssim


def const_grid(v, shape=(32, 32)):
    return Grid(np.full(shape, v, np.float32))


def rand_grid(seed, shape=(32, 32)):
    return Grid(np.random.default_rng(seed).random(shape, dtype=np.float32))


# --- psnr ---------------------------------------------------------------------

def test_psnr_identical_inputs_capped():
    g = rand_grid(0)
    assert psnr(g, g) == PSNR_CAP_DB


def test_psnr_uniform_tenth():
    a = const_grid(0.0)
    b = const_grid(np.float32(0.1))
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-6)


def test_psnr_uniform_half():
    a = const_grid(0.0)
    b = const_grid(0.5)
    assert psnr(a, b) == pytest.approx(20.0 * math.log10(2.0), abs=1e-9)


def test_psnr_symmetric_and_monotone():
    a, b = rand_grid(1), rand_grid(2)
    assert psnr(a, b) == psnr(b, a)
    worse = Grid(np.clip(b.values.astype(np.float64)
                         + 0.3 * np.sign(b.values - a.values + 1e-9), 0, 1).astype(np.float32))
    assert psnr(a, worse) < psnr(a, b)


def test_psnr_data_range():
    a = const_grid(0.0)
    b = const_grid(0.5)
    assert psnr(a, b, data_range=255.0) == pytest.approx(
        10.0 * math.log10(255.0 ** 2 / 0.25), abs=1e-9)
    with pytest.raises(ValueError):
        psnr(a, b, data_range=0.0)


def test_psnr_dim_mismatch():
    with pytest.raises(ValueError):
        psnr(const_grid(0, (4, 4)), const_grid(0, (4, 5)))


# --- ssim ---------------------------------------------------------------------

def test_ssim_identical_is_exactly_one():
    g = rand_grid(3)
    assert ssim(g, g) == 1.0


def test_ssim_constant_pair_closed_form():
    c1, c2 = 0.3, 0.5
    p = SsimParams()
    expected = (2 * c1 * c2 + (p.k1 * p.data_range) ** 2) / \
        (c1 ** 2 + c2 ** 2 + (p.k1 * p.data_range) ** 2)
    got = ssim(const_grid(np.float32(c1)), const_grid(np.float32(c2)), p)
    c1f, c2f = float(np.float32(c1)), float(np.float32(c2))
    expected_f = (2 * c1f * c2f + (p.k1 * p.data_range) ** 2) / \
        (c1f ** 2 + c2f ** 2 + (p.k1 * p.data_range) ** 2)
    assert got == pytest.approx(expected_f, abs=1e-9)
    assert got == pytest.approx(expected, abs=1e-6)


def test_ssim_structural_inversion_below_one():
    rng = np.random.default_rng(4)
    a = Grid((0.5 + 0.4 * np.sin(np.linspace(0, 8 * np.pi, 32 * 32))
              ).reshape(32, 32).astype(np.float32))
    inv = Grid((1.0 - a.values.astype(np.float64)).astype(np.float32))
    assert ssim(a, inv) < 1.0


def test_ssim_symmetric_and_bounded():
    a, b = rand_grid(5), rand_grid(6)
    s1, s2 = ssim(a, b), ssim(b, a)
    assert s1 == pytest.approx(s2, abs=1e-12)
    assert -1.0 <= s1 <= 1.0


def test_ssim_rejects_small_grids():
    with pytest.raises(ValueError):
        ssim(const_grid(0, (8, 8)), const_grid(0, (8, 8)))


# --- seam energy ----------------------------------------------------------------

COV = CoverageGeometry(radars=((32.0, 32.0, 24.0),), ramp_width=10.0)


def band64():
    return build_alpha_training(COV, 64, 64)


def radial_step(h=64, w=64, cx=32.0, cy=32.0, r=19.0, height=1.0):
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    d = np.hypot(xx - cx, yy - cy)
    return Grid((d <= r).astype(np.float32) * height)


def blended_step(h=64, w=64, cx=32.0, cy=32.0, r0=14.0, r1=24.0):
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    d = np.hypot(xx - cx, yy - cy)
    return Grid(np.clip((r1 - d) / (r1 - r0), 0, 1).astype(np.float32))


def test_seam_energy_constant_is_zero():
    assert seam_energy(const_grid(0.4, (64, 64)), band64()) == 0.0


def test_seam_energy_step_exceeds_blend():
    # the hard step concentrates its jump inside the band; the linear ramp
    # spreads it across the ramp width
    hard = seam_energy(radial_step(), band64())
    soft = seam_energy(blended_step(), band64())
    assert hard > soft > 0.0


def test_seam_energy_smooth_field_is_small():
    yy, xx = np.meshgrid(np.arange(64), np.arange(64), indexing="ij")
    smooth = Grid((0.5 + 0.3 * np.sin(xx / 17.0) * np.cos(yy / 13.0)).astype(np.float32))
    gy, gx = np.gradient(smooth.values.astype(np.float64))
    global_energy = float(np.mean(gx * gx + gy * gy))
    assert seam_energy(smooth, band64()) < 2.0 * global_energy


def test_seam_energy_translation_invariant():
    h = w = 96
    def build(cx, cy):
        cov = CoverageGeometry(radars=((cx, cy, 20.0),), ramp_width=8.0)
        band = build_alpha_training(cov, h, w)
        yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        d = np.hypot(xx - cx, yy - cy)
        g = Grid((d <= 16.0).astype(np.float32) * 0.8)
        return seam_energy(g, band)
    assert build(40.0, 40.0) == pytest.approx(build(52.0, 47.0), rel=1e-9)


def test_seam_energy_empty_band_errors():
    full = AlphaMap(np.ones((16, 16), np.float32))
    with pytest.raises(ValueError):
        seam_energy(const_grid(0, (16, 16)), full)
