"""End-to-end fusion pipeline: cadence resampling, composites, metrics, panels.

For each output timestamp the pipeline writes five panels (radar, satellite,
hard composite, alpha blend, inpainted blend), both as NFG1 grids and as
rendered PNGs, plus a key=value metrics report.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import blend as blend_mod
from . import flow as flow_mod
from . import metrics as metrics_mod
from . import network as net_mod
from . import synth as synth_mod
from .grid import Grid, export_png, read_grid, write_grid
from .rng import derive_seed


@dataclass
class PipelineConfig:
    coverage: blend_mod.CoverageGeometry
    out_dir: str
    mode: str = "alpha"                  # none | alpha | inpaint
    scene: synth_mod.SceneSpec | None = None
    sensor: synth_mod.SensorSpec | None = None
    frame_manifest: str | None = None    # alternative input: `minutes radar sat` rows
    model_path: str | None = None
    mask_variant: str | None = None      # default: binary model -> binary, else alpha
    cadence_step: float = 10.0
    sat_step: float = 15.0
    duration: float = 30.0
    seed: int = 0
    flow_params: flow_mod.FlowParams = flow_mod.FlowParams()

    def __post_init__(self):
        if self.mode not in ("none", "alpha", "inpaint"):
            raise ValueError("mode must be one of none, alpha, inpaint")
        have_scene = self.scene is not None
        have_files = self.frame_manifest is not None
        if have_scene == have_files:
            raise ValueError("exactly one input source (scene or frame manifest) required")
        if self.mode == "inpaint" and not self.model_path:
            raise ValueError("inpaint mode requires a model path")
        if self.cadence_step <= 0 or self.sat_step <= 0:
            raise ValueError("cadence steps must be positive")


def _load_manifest_frames(path):
    radar, sat = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            t, rpath, spath = ln.split()
            base = os.path.dirname(path)
            if rpath != "-":
                radar.append((float(t), read_grid(os.path.join(base, rpath))))
            if spath != "-":
                sat.append((float(t), read_grid(os.path.join(base, spath))))
    if len(sat) < 2:
        raise ValueError("need at least 2 satellite frames for cadence resampling")
    return radar, sat


def _synthesize_frames(cfg: PipelineConfig):
    scene, sensor = cfg.scene, cfg.sensor
    if sensor is None:
        sensor = synth_mod.SensorSpec(coverage=cfg.coverage)
    if sensor.coverage is None:
        raise ValueError("sensor spec needs radar coverage")
    radar, sat, truth = [], [], []
    t = 0.0
    while t <= cfg.duration + 1e-9:
        frame_idx = t / cfg.cadence_step
        g = synth_mod.render_field(scene, frame_idx)
        truth.append((t, g))
        radar.append((t, synth_mod.radar_view(g, sensor, derive_seed(cfg.seed, 71, round(t * 1000)))))
        t += cfg.cadence_step
    t = 0.0
    while t <= cfg.duration + 1e-9:
        frame_idx = t / cfg.cadence_step
        g = synth_mod.render_field(scene, frame_idx)
        sat.append((t, synth_mod.satellite_view(g, sensor, derive_seed(cfg.seed, 73, round(t * 1000)))))
        t += cfg.sat_step
    if len(sat) < 2:
        raise ValueError("need at least 2 satellite frames for cadence resampling")
    return radar, sat, dict(truth)


def _hard_composite(radar: Grid, sat: Grid, covered: np.ndarray) -> Grid:
    return Grid(np.where(covered, radar.values, sat.values))


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Execute the pipeline; returns the metrics report (also written to disk)."""
    os.makedirs(cfg.out_dir, exist_ok=True)

    if cfg.scene is not None:
        radar_frames, sat_frames, truth_by_t = _synthesize_frames(cfg)
    else:
        radar_frames, sat_frames = _load_manifest_frames(cfg.frame_manifest)
        truth_by_t = {}

    sat_seq = flow_mod.FrameSequence(tuple(sat_frames))
    sat_resampled = flow_mod.resample_cadence(sat_seq, cfg.cadence_step, cfg.flow_params)
    radar_by_t = {round(t, 6): g for t, g in radar_frames}

    h, w = sat_resampled.frames[0][1].shape
    alpha_inf = blend_mod.build_alpha_inference(cfg.coverage, h, w)
    band = blend_mod.build_alpha_training(cfg.coverage, h, w)
    covered = blend_mod.coverage_mask(cfg.coverage, h, w)

    params = None
    mask_variant = cfg.mask_variant
    if cfg.mode == "inpaint":
        params = net_mod.load_params(cfg.model_path)
        if mask_variant is None:
            mask_variant = "binary" if params.config.mask_mode == "binary" else "alpha"
        net_mask = blend_mod.inference_mask(band, mask_variant)

    report: dict[str, float] = {}
    for t, sat_g in sat_resampled.frames:
        key = round(t, 6)
        if key not in radar_by_t:
            continue
        radar_g = radar_by_t[key]
        hard = _hard_composite(radar_g, sat_g, covered)
        blended = blend_mod.alpha_blend(radar_g, sat_g, alpha_inf)
        panels = {"radar": radar_g, "satellite": sat_g, "hard": hard}
        if cfg.mode == "none":
            panels["fused"] = hard
        elif cfg.mode == "alpha":
            panels["fused"] = blended
        else:
            panels["alpha"] = blended
            panels["fused"] = net_mod.inpaint(blended, net_mask, params)
        tag = f"t{int(round(t)):05d}"
        for name, g in panels.items():
            write_grid(g, os.path.join(cfg.out_dir, f"{tag}_{name}.nfg"))
            export_png(g, os.path.join(cfg.out_dir, f"{tag}_{name}.png"))

        report[f"{tag}.seam_hard"] = metrics_mod.seam_energy(hard, band)
        report[f"{tag}.seam_alpha"] = metrics_mod.seam_energy(blended, band)
        if cfg.mode == "inpaint":
            report[f"{tag}.seam_inpaint"] = metrics_mod.seam_energy(panels["fused"], band)
        truth = truth_by_t.get(t)
        if truth is not None:
            report[f"{tag}.psnr_fused"] = metrics_mod.psnr(panels["fused"], truth)
            report[f"{tag}.ssim_fused"] = metrics_mod.ssim(panels["fused"], truth)

    report_path = os.path.join(cfg.out_dir, "report.txt")
    tmp = f"{report_path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        for k in sorted(report):
            fh.write(f"{k}={report[k]:.10g}\n")
    os.replace(tmp, report_path)
    return report
