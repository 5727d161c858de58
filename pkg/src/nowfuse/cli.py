"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage error. All randomness
flows from --seed; NOWFUSE_THREADS caps worker parallelism (the numeric
results are independent of it).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import blend as blend_mod
from . import flow as flow_mod
from . import metrics as metrics_mod
from . import network as net_mod
from . import pipeline as pipe_mod
from . import synth as synth_mod
from .grid import (Grid, export_png, read_flow, read_grid, read_mask,
                   write_flow, write_grid)


def _unit_interval(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} not in [0, 1]")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text} must be >= 1")
    return value


def _seed(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return value


def _channel_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad channel list {text!r}") from exc


def worker_count() -> int:
    """Worker cap from NOWFUSE_THREADS (default: machine parallelism)."""
    raw = os.environ.get("NOWFUSE_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"NOWFUSE_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ValueError("NOWFUSE_THREADS must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nowfuse",
                                 description="Radar/satellite grid fusion toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic training set")
    p.add_argument("--spec", required=True, help="scene spec file (key value lines)")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("flow", help="estimate optical flow between two grids")
    p.add_argument("--prev", required=True)
    p.add_argument("--next", dest="next_", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--levels", type=_positive_int, default=4)
    p.add_argument("--window", type=_positive_int, default=7)
    p.add_argument("--iters", type=_positive_int, default=3)

    p = sub.add_parser("interp", help="motion-compensated in-between frame")
    p.add_argument("--prev", required=True)
    p.add_argument("--next", dest="next_", required=True)
    p.add_argument("--t", type=_unit_interval, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("blend", help="compose radar and satellite grids")
    p.add_argument("--radar", required=True)
    p.add_argument("--sat", required=True)
    p.add_argument("--coverage", required=True)
    p.add_argument("--mode", choices=("none", "alpha", "inpaint"), default="alpha")
    p.add_argument("--model")
    p.add_argument("--mask-variant", choices=synth_mod.MASK_VARIANTS)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train an inpainting network")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=synth_mod.MASK_VARIANTS, required=True)
    p.add_argument("--steps", type=_positive_int, required=True)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--batch", type=_positive_int, default=8)
    p.add_argument("--channels", type=_channel_list, default=(32, 64, 128, 256))
    p.add_argument("--kernels", type=_channel_list, default=(7, 5, 3, 3))
    p.add_argument("--log-every", type=_positive_int, default=0,
                   help="print loss every N steps (0: silent)")

    p = sub.add_parser("infer", help="inpaint a grid with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="print psnr/ssim (and seam energy) metrics")
    p.add_argument("--a", required=True, help="image under evaluation")
    p.add_argument("--b", required=True, help="reference image")
    p.add_argument("--band", help="training-style band map for seam energy")
    p.add_argument("--data-range", type=float, default=1.0)

    p = sub.add_parser("pipeline", help="run the full fusion pipeline")
    p.add_argument("--spec", help="synthetic scene spec file")
    p.add_argument("--frames", help="frame manifest: `minutes radar.nfg sat.nfg` rows")
    p.add_argument("--coverage", required=True)
    p.add_argument("--mode", choices=("none", "alpha", "inpaint"), default="alpha")
    p.add_argument("--model")
    p.add_argument("--mask-variant", choices=synth_mod.MASK_VARIANTS)
    p.add_argument("--step", type=float, default=10.0)
    p.add_argument("--sat-step", type=float, default=15.0)
    p.add_argument("--duration", type=float, default=30.0)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-png", help="render an NFG grid as 8-bit grayscale PNG")
    p.add_argument("--in", dest="in_", required=True)
    p.add_argument("--out", required=True)
    return ap


def _cmd_synth(args) -> int:
    scene, sensor, band, noise = synth_mod.parse_scene_file(args.spec)
    manifest = synth_mod.make_training_set(scene, sensor, args.n, band, noise, args.out)
    print(f"wrote {args.n} items, manifest {manifest}")
    return 0


def _cmd_flow(args) -> int:
    params = flow_mod.FlowParams(pyramid_levels=args.levels,
                                 window_radius=args.window,
                                 iterations_per_level=args.iters)
    f = flow_mod.estimate_flow(read_grid(args.prev), read_grid(args.next_), params)
    write_flow(f, args.out)
    return 0


def _cmd_interp(args) -> int:
    g = flow_mod.interpolate(read_grid(args.prev), read_grid(args.next_), args.t)
    write_grid(g, args.out)
    return 0


def _cmd_blend(args) -> int:
    radar = read_grid(args.radar)
    sat = read_grid(args.sat)
    cov = blend_mod.parse_coverage(args.coverage)
    h, w = radar.shape
    covered = blend_mod.coverage_mask(cov, h, w)
    if args.mode == "none":
        out = Grid(np.where(covered, radar.values, sat.values))
    else:
        alpha = blend_mod.build_alpha_inference(cov, h, w)
        out = blend_mod.alpha_blend(radar, sat, alpha)
        if args.mode == "inpaint":
            if not args.model:
                raise ValueError("--model is required for inpaint mode")
            params = net_mod.load_params(args.model)
            variant = args.mask_variant
            if variant is None:
                variant = "binary" if params.config.mask_mode == "binary" else "alpha"
            band = blend_mod.build_alpha_training(cov, h, w)
            mask = blend_mod.inference_mask(band, variant)
            out = net_mod.inpaint(out, mask, params)
    write_grid(out, args.out)
    return 0


def _cmd_train(args) -> int:
    items = synth_mod.load_training_items(args.data, args.mode)
    mask_mode = "binary" if args.mode == "binary" else "soft"
    net_cfg = net_mod.NetConfig(encoder_channels=args.channels,
                                encoder_kernels=args.kernels,
                                mask_mode=mask_mode)
    train_cfg = net_mod.TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                                    steps=args.steps, seed=args.seed)
    progress = None
    if args.log_every:
        def progress(step, value, every=args.log_every):
            if step % every == 0:
                print(f"step {step} loss {value:.6f}", flush=True)
    params, history = net_mod.train(items, net_cfg, train_cfg, progress=progress)
    net_mod.save_params(params, args.out)
    if history:
        print(f"final loss {history[-1][1]:.6f} after {history[-1][0]} steps")
    return 0


def _cmd_infer(args) -> int:
    params = net_mod.load_params(args.model)
    out = net_mod.inpaint(read_grid(args.image), read_mask(args.mask), params)
    write_grid(out, args.out)
    return 0


def _cmd_eval(args) -> int:
    a = read_grid(args.a)
    b = read_grid(args.b)
    print(f"psnr={metrics_mod.psnr(a, b, args.data_range):.10g}")
    print(f"ssim={metrics_mod.ssim(a, b, metrics_mod.SsimParams(data_range=args.data_range)):.10g}")
    if args.band:
        band = read_mask(args.band)
        print(f"seam={metrics_mod.seam_energy(a, band):.10g}")
    return 0


def _cmd_pipeline(args) -> int:
    if (args.spec is None) == (args.frames is None):
        raise ValueError("exactly one of --spec / --frames is required")
    cov = blend_mod.parse_coverage(args.coverage)
    scene = sensor = None
    if args.spec:
        scene, sensor, _, _ = synth_mod.parse_scene_file(args.spec)
        scene = synth_mod.SceneSpec(**{**scene.__dict__, "seed": args.seed})
        sensor = synth_mod.SensorSpec(**{**sensor.__dict__, "coverage": cov})
    cfg = pipe_mod.PipelineConfig(
        coverage=cov, out_dir=args.out, mode=args.mode, scene=scene,
        sensor=sensor, frame_manifest=args.frames, model_path=args.model,
        mask_variant=args.mask_variant, cadence_step=args.step,
        sat_step=args.sat_step, duration=args.duration, seed=args.seed,
    )
    report = pipe_mod.run_pipeline(cfg)
    for k in sorted(report):
        print(f"{k}={report[k]:.10g}")
    return 0


def _cmd_export_png(args) -> int:
    export_png(read_grid(args.in_), args.out)
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "flow": _cmd_flow,
    "interp": _cmd_interp,
    "blend": _cmd_blend,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "pipeline": _cmd_pipeline,
    "export-png": _cmd_export_png,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        worker_count()
        return _HANDLERS[args.command](args)
    except (ValueError, OSError, net_mod.NonFiniteError) as exc:
        print(f"nowfuse: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
