"""Deterministic synthetic scenes, sensor views, and training-set generation.

Scenes are sums of Gaussian blobs advected by a uniform velocity (plus an
optional spin about the grid center). Fields at any fractional frame index
are rendered analytically, so motion ground truth is exact by construction.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .blend import (CoverageGeometry, NoiseSpec, build_alpha_training,
                    corrupt, coverage_mask, inference_mask, jitter_geometry,
                    noise_field)
from .flow import FrameSequence
from .grid import Grid, resample_bilinear, write_grid
from .rng import derive_seed, make_rng

MASK_VARIANTS = ("binary", "semi", "alpha")
MANIFEST_NAME = "manifest.txt"


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    height: int = 64
    width: int = 64
    n_blobs: int = 12
    sigma_range: tuple[float, float] = (4.0, 16.0)
    intensity_range: tuple[float, float] = (0.3, 1.0)
    velocity: tuple[float, float] = (0.0, 0.0)  # (vx, vy) px/frame
    spin: float = 0.0                           # radians/frame about grid center
    margin: float = 0.0                         # keep blob centers this far from borders

    def __post_init__(self):
        if self.height < 32 or self.width < 32:
            raise ValueError("scene dimensions must be at least 32")
        if self.n_blobs < 1:
            raise ValueError("n_blobs must be >= 1")
        if self.sigma_range[0] <= 0 or self.sigma_range[1] < self.sigma_range[0]:
            raise ValueError("invalid sigma_range")
        if not 0 <= 2 * self.margin < min(self.height, self.width):
            raise ValueError("margin too large for the grid")


@dataclass(frozen=True)
class SensorSpec:
    radar_noise_sigma: float = 0.02
    coverage: CoverageGeometry | None = None
    sat_blur_sigma: float = 3.0
    sat_downsample: int = 4
    sat_gain: float = 0.9
    sat_bias: float = 0.05

    def __post_init__(self):
        if self.radar_noise_sigma < 0 or self.sat_blur_sigma < 0:
            raise ValueError("noise/blur sigma must be >= 0")
        if self.sat_downsample < 1:
            raise ValueError("downsample factor must be >= 1")
        if not 0 < self.sat_gain <= 1.5:
            raise ValueError("gain must lie in (0, 1.5]")


def _blob_params(spec: SceneSpec):
    rng = make_rng(spec.seed, 41)
    n = spec.n_blobs
    cx = spec.margin + rng.random(n) * (spec.width - 1 - 2 * spec.margin)
    cy = spec.margin + rng.random(n) * (spec.height - 1 - 2 * spec.margin)
    sig = spec.sigma_range[0] + rng.random(n) * (spec.sigma_range[1] - spec.sigma_range[0])
    amp = spec.intensity_range[0] + rng.random(n) * (
        spec.intensity_range[1] - spec.intensity_range[0])
    return cx, cy, sig, amp


def render_field(spec: SceneSpec, frame: float) -> Grid:
    """Analytic scene state at a (possibly fractional) frame index."""
    cx, cy, sig, amp = _blob_params(spec)
    t = float(frame)
    ox = (spec.width - 1) / 2.0
    oy = (spec.height - 1) / 2.0
    if spec.spin != 0.0:
        ang = spec.spin * t
        ca, sa = np.cos(ang), np.sin(ang)
        rx = ca * (cx - ox) - sa * (cy - oy) + ox
        ry = sa * (cx - ox) + ca * (cy - oy) + oy
        cx, cy = rx, ry
    cx = cx + spec.velocity[0] * t
    cy = cy + spec.velocity[1] * t

    yy, xx = np.meshgrid(np.arange(spec.height, dtype=np.float64),
                         np.arange(spec.width, dtype=np.float64), indexing="ij")
    field = np.zeros((spec.height, spec.width))
    for k in range(spec.n_blobs):
        d2 = (xx - cx[k]) ** 2 + (yy - cy[k]) ** 2
        field += amp[k] * np.exp(-d2 / (2.0 * sig[k] ** 2))
    return Grid(np.clip(field, 0.0, 1.0).astype(np.float32))


def gen_sequence(spec: SceneSpec, n_frames: int, dt_minutes: float) -> FrameSequence:
    """Frames at 0, dt, 2*dt, ... advected one velocity step per frame."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    frames = tuple((k * dt_minutes, render_field(spec, k)) for k in range(n_frames))
    return FrameSequence(frames)


def radar_view(truth: Grid, s: SensorSpec, seed: int) -> Grid:
    """Truth plus Gaussian noise inside radar coverage, zero outside."""
    if s.coverage is None:
        raise ValueError("sensor spec has no radar coverage geometry")
    covered = coverage_mask(s.coverage, truth.height, truth.width)
    if s.radar_noise_sigma > 0:
        noise = make_rng(seed, 43).normal(0.0, s.radar_noise_sigma, truth.shape)
        v = np.clip(truth.values.astype(np.float64) + noise, 0.0, 1.0)
    else:
        v = truth.values.astype(np.float64)
    return Grid(np.where(covered, v, 0.0).astype(np.float32))


def satellite_view(truth: Grid, s: SensorSpec, seed: int = 0) -> Grid:
    """Degraded global view: gain * blur(truth) + bias, coarsened and restored."""
    f = truth.values.astype(np.float64)
    if s.sat_blur_sigma > 0:
        f = ndimage.gaussian_filter(f, sigma=s.sat_blur_sigma, mode="nearest")
    f = s.sat_gain * f + s.sat_bias
    g = Grid(np.clip(f, 0.0, 1.0).astype(np.float32))
    if s.sat_downsample > 1:
        lo_h = max(1, truth.height // s.sat_downsample)
        lo_w = max(1, truth.width // s.sat_downsample)
        g = resample_bilinear(resample_bilinear(g, lo_h, lo_w),
                              truth.height, truth.width)
        g = Grid(np.clip(g.values, 0.0, 1.0))
    return g


_ITEM_FILES = ("corrupted", "mask_binary", "mask_semi", "mask_alpha", "target")


def make_training_set(spec: SceneSpec, sensor: SensorSpec, n_items: int,
                      band_geometry: CoverageGeometry, noise: NoiseSpec,
                      out_dir) -> str:
    """Write n_items (corrupted, masks, target) groups plus a manifest.

    The target is the satellite-style view of a fresh scene per item; the
    corruption applies band noise via the training alpha map, whose geometry
    is jittered per item. Returns the manifest path.
    """
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for i in range(n_items):
        scene = replace(spec, seed=derive_seed(spec.seed, 53, i))
        truth = render_field(scene, 0.0)
        target = satellite_view(truth, sensor, derive_seed(spec.seed, 59, i))
        geom = jitter_geometry(band_geometry, spec.seed, i,
                               spec.height, spec.width)
        alpha = build_alpha_training(geom, spec.height, spec.width)
        n_field = noise_field(replace(noise, seed=derive_seed(noise.seed, 61, i)),
                              spec.height, spec.width)
        corrupted = corrupt(target, alpha, n_field)

        grids = {
            "corrupted": corrupted,
            "mask_binary": inference_mask(alpha, "binary"),
            "mask_semi": inference_mask(alpha, "semi"),
            "mask_alpha": inference_mask(alpha, "alpha"),
            "target": target,
        }
        names = []
        for key in _ITEM_FILES:
            fname = f"item_{i:05d}_{key}.nfg"
            write_grid(grids[key], os.path.join(out_dir, fname))
            names.append(fname)
        lines.append(f"item_{i:05d} " + " ".join(names))

    manifest = os.path.join(out_dir, MANIFEST_NAME)
    tmp = f"{manifest}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, manifest)
    return manifest


_SPEC_KEYS = {
    "seed": int, "height": int, "width": int, "n_blobs": int,
    "sigma_min": float, "sigma_max": float,
    "intensity_min": float, "intensity_max": float,
    "vx": float, "vy": float, "spin": float,
    "band_cx": float, "band_cy": float, "band_radius": float, "band_ramp": float,
    "noise_kind": str, "noise_seed": int, "noise_smooth_sigma": float,
    "radar_sigma": float, "sat_blur": float, "sat_factor": int,
    "sat_gain": float, "sat_bias": float,
}


def parse_scene_file(path):
    """Parse a `key value` scene file; unknown keys are rejected.

    Returns (SceneSpec, SensorSpec, band CoverageGeometry, NoiseSpec).
    The sensor's radar coverage is the band geometry.
    """
    kv = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            parts = ln.split(None, 1)
            if len(parts) != 2:
                raise ValueError(f"{path}: malformed line {ln!r}")
            key, value = parts
            if key not in _SPEC_KEYS:
                raise ValueError(f"{path}: unknown key {key!r}")
            kv[key] = _SPEC_KEYS[key](value)
    return build_scene_config(kv)


def build_scene_config(kv: dict):
    """Assemble specs from a key/value mapping (defaults fill the gaps)."""
    unknown = set(kv) - set(_SPEC_KEYS)
    if unknown:
        raise ValueError(f"unknown scene keys: {sorted(unknown)}")
    height = kv.get("height", 64)
    width = kv.get("width", 64)
    scene = SceneSpec(
        seed=kv.get("seed", 0),
        height=height,
        width=width,
        n_blobs=kv.get("n_blobs", 12),
        sigma_range=(kv.get("sigma_min", 4.0), kv.get("sigma_max", 16.0)),
        intensity_range=(kv.get("intensity_min", 0.3), kv.get("intensity_max", 1.0)),
        velocity=(kv.get("vx", 0.0), kv.get("vy", 0.0)),
        spin=kv.get("spin", 0.0),
    )
    band = CoverageGeometry(
        radars=((kv.get("band_cx", (width - 1) / 2.0),
                 kv.get("band_cy", (height - 1) / 2.0),
                 kv.get("band_radius", 0.38 * min(height, width))),),
        ramp_width=kv.get("band_ramp", 0.25 * min(height, width)),
    )
    sensor = SensorSpec(
        radar_noise_sigma=kv.get("radar_sigma", 0.02),
        coverage=band,
        sat_blur_sigma=kv.get("sat_blur", 3.0),
        sat_downsample=kv.get("sat_factor", 4),
        sat_gain=kv.get("sat_gain", 0.9),
        sat_bias=kv.get("sat_bias", 0.05),
    )
    noise = NoiseSpec(
        kind=kv.get("noise_kind", "uniform"),
        seed=kv.get("noise_seed", scene.seed),
        smooth_sigma=kv.get("noise_smooth_sigma", 3.0),
    )
    return scene, sensor, band, noise


def load_training_items(data_dir, variant: str):
    """Read (corrupted, mask, target) float32 array triples for one mask variant."""
    from .grid import read_grid, read_mask

    if variant not in MASK_VARIANTS:
        raise ValueError(f"variant must be one of {MASK_VARIANTS}")
    manifest = os.path.join(data_dir, MANIFEST_NAME)
    with open(manifest, "r", encoding="utf-8") as fh:
        rows = [ln.split() for ln in fh if ln.strip()]
    col = {"binary": 2, "semi": 3, "alpha": 4}[variant]
    items = []
    for row in rows:
        if len(row) != 6:
            raise ValueError(f"{manifest}: malformed row {row!r}")
        corrupted = read_grid(os.path.join(data_dir, row[1])).values
        mask = read_mask(os.path.join(data_dir, row[col])).values
        target = read_grid(os.path.join(data_dir, row[5])).values
        items.append((corrupted, mask, target))
    return items
