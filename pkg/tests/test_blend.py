import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nowfuse.blend import (AlphaMap, CoverageGeometry, NoiseSpec, alpha_blend,
                           build_alpha_inference, build_alpha_training,
                           corrupt, coverage_mask, inference_mask, noise_field,
                           parse_coverage, write_coverage)
from nowfuse.grid import Grid

COV = CoverageGeometry(radars=((32.0, 32.0, 24.0),), ramp_width=8.0)


def const_grid(v, shape=(8, 8)):
    return Grid(np.full(shape, v, np.float32))


def rand_grid(seed, shape=(16, 16)):
    return Grid(np.random.default_rng(seed).random(shape, dtype=np.float32))


def rand_mask(seed, shape=(16, 16)):
    return AlphaMap(np.random.default_rng(seed).random(shape, dtype=np.float32))


# --- alpha map construction -------------------------------------------------

def test_inference_alpha_ramp_endpoints():
    a = build_alpha_inference(COV, 64, 64)
    cx, cy, r = COV.radars[0]
    w = COV.ramp_width
    # exact integer-distance probes on the horizontal axis
    assert a.values[int(cy), int(cx + (r - w))] == 1.0   # d = R - w
    assert a.values[int(cy), int(cx + r)] == 0.0         # d = R
    assert a.values[int(cy), int(cx)] == 1.0             # core


def test_inference_alpha_ramp_midpoint():
    a = build_alpha_inference(COV, 64, 64)
    cx, cy, r = COV.radars[0]
    w = COV.ramp_width
    assert abs(a.values[int(cy), int(cx + r - w / 2)] - 0.5) < 1e-6


def test_inference_alpha_two_radars_max():
    cov = CoverageGeometry(radars=((20.0, 32.0, 18.0), (44.0, 32.0, 18.0)),
                           ramp_width=6.0)
    a = build_alpha_inference(cov, 64, 64)
    # pixel in the first radar's core but in the second's ramp
    assert a.values[32, 20] == 1.0
    assert a.values[32, 44] == 1.0


def test_training_alpha_centerline_and_edges():
    a = build_alpha_training(COV, 64, 64)
    cx, cy, r = COV.radars[0]
    w = COV.ramp_width
    assert a.values[int(cy), int(cx + r - w / 2)] == 0.0   # centerline
    assert a.values[int(cy), int(cx + r)] == 1.0           # outer edge
    assert a.values[int(cy), int(cx + r - w)] == 1.0       # inner edge
    assert abs(a.values[int(cy), int(cx + r - w / 4)] - 0.5) < 1e-6
    assert a.values[int(cy), int(cx)] == 1.0               # deep core


def test_alpha_lipschitz_in_pixel_distance():
    # linear ramps: |da/dpixel| <= 1 / (w/2) for the training map
    a = build_alpha_training(COV, 64, 64).values.astype(np.float64)
    lim = 2.0 / COV.ramp_width + 1e-6
    assert np.max(np.abs(np.diff(a, axis=0))) <= lim
    assert np.max(np.abs(np.diff(a, axis=1))) <= lim
    ai = build_alpha_inference(COV, 64, 64).values.astype(np.float64)
    lim_i = 1.0 / COV.ramp_width + 1e-6
    assert np.max(np.abs(np.diff(ai, axis=0))) <= lim_i


def test_coverage_geometry_invariants():
    with pytest.raises(ValueError):
        CoverageGeometry(radars=((0, 0, 10),), ramp_width=12.0)
    with pytest.raises(ValueError):
        CoverageGeometry(radars=((0, 0, -1),), ramp_width=0.5)
    with pytest.raises(ValueError):
        CoverageGeometry(radars=(), ramp_width=1.0)


# --- blending ----------------------------------------------------------------

def test_alpha_blend_endpoints_exact():
    i1, i2 = rand_grid(1), rand_grid(2)
    zeros = AlphaMap(np.zeros((16, 16), np.float32))
    ones = AlphaMap(np.ones((16, 16), np.float32))
    assert np.array_equal(alpha_blend(i1, i2, zeros).values, i2.values)
    assert np.array_equal(alpha_blend(i1, i2, ones).values, i1.values)


def test_alpha_blend_quarter():
    out = alpha_blend(const_grid(0.8), const_grid(0.4),
                      AlphaMap(np.full((8, 8), 0.25, np.float32)))
    assert np.allclose(out.values, 0.5, atol=1e-7)


def test_alpha_blend_complementarity():
    i1, i2, a = rand_grid(3), rand_grid(4), rand_mask(5)
    left = alpha_blend(i1, i2, a).values.astype(np.float64) + \
        alpha_blend(i2, i1, a).values.astype(np.float64)
    right = i1.values.astype(np.float64) + i2.values.astype(np.float64)
    assert np.allclose(left, right, atol=1e-6)


def test_alpha_blend_range_between_inputs():
    i1, i2, a = rand_grid(6), rand_grid(7), rand_mask(8)
    out = alpha_blend(i1, i2, a).values
    lo = np.minimum(i1.values, i2.values) - 1e-6
    hi = np.maximum(i1.values, i2.values) + 1e-6
    assert np.all(out >= lo) and np.all(out <= hi)


def test_alpha_blend_dim_mismatch():
    with pytest.raises(ValueError):
        alpha_blend(rand_grid(0), rand_grid(1, (8, 8)), rand_mask(2))


# --- corruption ---------------------------------------------------------------

def test_corrupt_alpha_zero_keeps_image():
    i, n = rand_grid(9), rand_grid(10)
    a = AlphaMap(np.zeros((16, 16), np.float32))
    assert np.array_equal(corrupt(i, a, n).values, i.values)


def test_corrupt_alpha_half_is_noise():
    i, n = rand_grid(11), rand_grid(12)
    a = AlphaMap(np.full((16, 16), 0.5, np.float32))
    assert np.array_equal(corrupt(i, a, n).values, n.values)


def test_corrupt_quarter_value():
    out = corrupt(const_grid(1.0), AlphaMap(np.full((8, 8), 0.25, np.float32)),
                  const_grid(0.0))
    assert np.allclose(out.values, 0.5, atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_corrupt_symmetric_about_half(seed):
    g = np.random.default_rng(seed)
    i = Grid(g.random((8, 8), dtype=np.float32))
    n = Grid(g.random((8, 8), dtype=np.float32))
    av = g.random((8, 8), dtype=np.float32)
    a = AlphaMap(av)
    a_flip = AlphaMap((1.0 - av.astype(np.float64)).astype(np.float32))
    assert np.array_equal(corrupt(i, a, n).values, corrupt(i, a_flip, n).values)


def test_corrupt_noise_equal_source_invisible():
    i, a = rand_grid(13), rand_mask(14)
    out = corrupt(i, a, i)
    assert np.allclose(out.values, i.values, atol=1e-7)


def test_corrupt_rejects_out_of_range_noise():
    i, a = rand_grid(15), rand_mask(16)
    bad = Grid(np.full((16, 16), 1.5, np.float32))
    with pytest.raises(ValueError):
        corrupt(i, a, bad)


# --- noise fields ---------------------------------------------------------------

def test_noise_deterministic_per_seed():
    s = NoiseSpec(kind="uniform", seed=42)
    a = noise_field(s, 32, 32)
    b = noise_field(s, 32, 32)
    assert np.array_equal(a.values, b.values)
    c = noise_field(NoiseSpec(kind="uniform", seed=43), 32, 32)
    assert not np.array_equal(a.values, c.values)


def test_noise_uniform_mean():
    s = NoiseSpec(kind="uniform", seed=7)
    f = noise_field(s, 1000, 1000)
    assert abs(float(f.values.mean()) - 0.5) < 0.01


def test_noise_smoothed_renormalized():
    s = NoiseSpec(kind="gaussian-smoothed", seed=7, smooth_sigma=2.5)
    f = noise_field(s, 64, 64)
    assert f.values.min() == 0.0
    assert f.values.max() == 1.0


def test_noise_rejects_bad_spec():
    with pytest.raises(ValueError):
        NoiseSpec(kind="pink")
    with pytest.raises(ValueError):
        NoiseSpec(kind="gaussian-smoothed", smooth_sigma=0.0)


# --- masks ---------------------------------------------------------------------

def band_alpha():
    return build_alpha_training(COV, 64, 64)


def test_inference_mask_binary():
    a = band_alpha()
    m = inference_mask(a, "binary")
    band = a.values < 1.0
    assert np.all(m.values[band] == 0.0)
    assert np.all(m.values[~band] == 1.0)


def test_inference_mask_semi():
    a = band_alpha()
    m = inference_mask(a, "semi")
    band = a.values < 1.0
    assert np.all(m.values[band] == 0.5)
    assert np.all(m.values[~band] == 1.0)


def test_inference_mask_alpha_passthrough():
    a = band_alpha()
    m = inference_mask(a, "alpha")
    assert np.array_equal(m.values, a.values)


def test_inference_mask_bad_mode():
    with pytest.raises(ValueError):
        inference_mask(band_alpha(), "soft")


# --- coverage file -----------------------------------------------------------

def test_coverage_file_roundtrip(tmp_path):
    cov = CoverageGeometry(radars=((10.5, 20.0, 15.0), (40.0, 40.0, 20.0)),
                           ramp_width=5.0)
    path = tmp_path / "cov.txt"
    write_coverage(cov, path)
    back = parse_coverage(path)
    assert back == cov


def test_coverage_file_requires_ramp_header(tmp_path):
    path = tmp_path / "cov.txt"
    path.write_text("10 10 5\n")
    with pytest.raises(ValueError):
        parse_coverage(path)


def test_coverage_mask_matches_distances():
    m = coverage_mask(COV, 64, 64)
    cx, cy, r = COV.radars[0]
    assert m[int(cy), int(cx)]
    assert not m[0, 0]
    assert m[int(cy), int(cx + r)]          # boundary included
    assert not m[int(cy), int(cx + r + 1)]
