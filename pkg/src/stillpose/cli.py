"""Command-line entry point: track, clean, fit, check, serve, eval,
validate-depth, and synth subcommands over sequence directories.

Exit code is 0 only when the requested work completed in full. Multiple
--seq directories run in parallel with --jobs."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import partial
from pathlib import Path

from . import pipeline
from .pipeline import PipelineConfig


def _load_config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    tracking = config.tracking
    if getattr(args, "k1", None) is not None:
        tracking = replace(tracking, k1=args.k1)
    if getattr(args, "k2", None) is not None:
        tracking = replace(tracking, k2=args.k2)
    if getattr(args, "radius", None) is not None:
        tracking = replace(tracking, neighbor_radius=args.radius)
    cleaning = config.cleaning
    for flag, name in (
        ("keep_threshold", "keep_threshold"),
        ("zbuffer_downscale", "zbuffer_downscale"),
        ("depth_slack", "depth_slack"),
        ("color_distance", "color_distance_max"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            cleaning = replace(cleaning, **{name: value})
    fit = config.fit
    for flag in ("lambda_3d", "lambda_2d", "lambda_epose", "lambda_mpose", "lambda_shape",
                 "sigma_3d", "sigma_2d", "max_iterations", "tolerance", "pixel_stride"):
        value = getattr(args, flag, None)
        if value is not None:
            fit = replace(fit, **{flag: value})
    if getattr(args, "stages", None):
        fit = replace(fit, stages=tuple(args.stages.split(",")))
    return replace(config, tracking=tracking, cleaning=cleaning, fit=fit)


def _add_common(parser):
    parser.add_argument("--config", help="pipeline config JSON file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)


def _add_fit_flags(parser):
    for flag in ("lambda-3d", "lambda-2d", "lambda-epose", "lambda-mpose", "lambda-shape",
                 "sigma-3d", "sigma-2d", "tolerance"):
        parser.add_argument(f"--{flag}", type=float, dest=flag.replace("-", "_"))
    parser.add_argument("--max-iterations", type=int, dest="max_iterations")
    parser.add_argument("--pixel-stride", type=int, dest="pixel_stride")
    parser.add_argument("--stages", help="comma-separated stage names (global,all)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stillpose",
        description="Reconstruct static human poses from moving-camera video "
                    "and benchmark 3D pose predictions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="associate instance masks into tracks")
    p.add_argument("--seq", required=True, action="append")
    p.add_argument("--out")
    p.add_argument("--k1", type=float)
    p.add_argument("--k2", type=float)
    p.add_argument("--radius", type=int)
    _add_common(p)

    p = sub.add_parser("clean", help="prune the point cloud per track")
    p.add_argument("--seq", required=True, action="append")
    p.add_argument("--out")
    p.add_argument("--tracks")
    p.add_argument("--keep-threshold", type=int, dest="keep_threshold")
    p.add_argument("--zbuffer-downscale", type=int, dest="zbuffer_downscale")
    p.add_argument("--depth-slack", type=float, dest="depth_slack")
    p.add_argument("--color-distance", type=float, dest="color_distance")
    _add_common(p)

    p = sub.add_parser("fit", help="fit one body per track")
    p.add_argument("--seq", required=True, action="append")
    p.add_argument("--out")
    p.add_argument("--tracks")
    p.add_argument("--clouds")
    p.add_argument("--model")
    p.add_argument("--gmm")
    p.add_argument("--mean-pose", dest="mean_pose")
    _add_fit_flags(p)
    _add_common(p)

    p = sub.add_parser("check", help="run automatic acceptance filters")
    p.add_argument("--seq", required=True, action="append")
    p.add_argument("--out")
    p.add_argument("--tracks")
    p.add_argument("--model")
    p.add_argument("--threshold-px", type=float, dest="threshold_px")
    _add_common(p)

    p = sub.add_parser("serve", help="serve the curation API and UI")
    p.add_argument("--store", required=True)
    p.add_argument("--ui")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    _add_common(p)

    p = sub.add_parser("eval", help="benchmark predictions against ground truth")
    p.add_argument("--instances", required=True, help="directory of instance_*.json")
    p.add_argument("--pred", required=True, help="directory of pred_<id>.json")
    p.add_argument("--model", required=True)
    p.add_argument("--seq", help="sequence dir providing ground-truth cameras")
    p.add_argument("--out")
    p.add_argument("--mean-pose", dest="mean_pose")
    p.add_argument("--any-status", action="store_true",
                   help="evaluate every exported instance, not only accepted ones")
    _add_common(p)

    p = sub.add_parser("validate-depth", help="compare rendered and captured depth maps")
    p.add_argument("--rendered", help="directory of rendered depth rasters")
    p.add_argument("--captured", required=True)
    p.add_argument("--seq", help="render fits from this sequence instead of --rendered")
    p.add_argument("--fit", help="fit_<k>.json used with --seq")
    p.add_argument("--model")
    p.add_argument("--out")
    _add_common(p)

    p = sub.add_parser("synth", help="generate a synthetic sequence with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=("single", "crossing", "crossing-ghost"),
                   default="single")
    p.add_argument("--scene", help="JSON scene spec (overrides --preset)")
    p.add_argument("--frames", type=int)
    p.add_argument("--point-jitter", type=float, default=0.0, dest="point_jitter")
    p.add_argument("--pixel-jitter", type=float, default=0.0, dest="pixel_jitter")
    p.add_argument("--dense-model", action="store_true", dest="dense_model",
                   help="use the denser toy body (default for presets)")
    _add_common(p)
    return parser


def _run_per_sequence(func, seqs: list[str], jobs: int) -> None:
    if jobs <= 1 or len(seqs) <= 1:
        for seq in seqs:
            func(seq)
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(func, seq) for seq in seqs]
        for future in futures:
            future.result()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "track":
            config = _load_config(args)
            _run_per_sequence(
                partial(pipeline.stage_track, config=config, out_dir=args.out),
                args.seq, args.jobs,
            )
        elif args.command == "clean":
            config = _load_config(args)
            _run_per_sequence(
                partial(pipeline.stage_clean, config=config, out_dir=args.out,
                        tracks_file=args.tracks),
                args.seq, args.jobs,
            )
        elif args.command == "fit":
            config = _load_config(args)
            _run_per_sequence(
                partial(pipeline.stage_fit, config=config, out_dir=args.out,
                        tracks_file=args.tracks, clouds_dir=args.clouds,
                        model_file=args.model, gmm_file=args.gmm,
                        mean_pose_file=args.mean_pose),
                args.seq, args.jobs,
            )
        elif args.command == "check":
            config = _load_config(args)
            if args.threshold_px is not None:
                config = replace(
                    config,
                    postproc=replace(config.postproc, reproj_base_px=args.threshold_px),
                )
            _run_per_sequence(
                partial(pipeline.stage_check, config=config, out_dir=args.out,
                        tracks_file=args.tracks, model_file=args.model),
                args.seq, args.jobs,
            )
        elif args.command == "serve":
            import uvicorn

            from .curation import ReviewStore, create_app

            store = ReviewStore(args.store)
            app = create_app(store, ui_dir=args.ui)
            uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
        elif args.command == "eval":
            statuses = (
                ("auto-accepted", "human-accepted", "pending-human",
                 "auto-rejected", "human-rejected")
                if args.any_status
                else ("auto-accepted", "human-accepted")
            )
            pipeline.stage_eval(
                args.instances, args.pred, args.model, seq_dir=args.seq,
                out_dir=args.out, mean_pose_file=args.mean_pose, statuses=statuses,
            )
        elif args.command == "validate-depth":
            rendered = args.rendered
            if rendered is None:
                if not (args.seq and args.fit):
                    raise SystemExit("validate-depth needs --rendered or --seq with --fit")
                rendered = pipeline.render_fit_depths(args.seq, args.fit, args.model)
            validation = pipeline.stage_validate_depth(rendered, args.captured, args.out)
            print(json.dumps({
                "mean_cm": validation.mean_cm,
                "median_cm": validation.median_cm,
                "success_rate": validation.success_rate,
            }, sort_keys=True))
        elif args.command == "synth":
            from .synth import SyntheticScene, crossing_scene, generate_synthetic, single_person_scene
            from .toy import make_toy_model

            if args.scene:
                scene = SyntheticScene.from_json(json.loads(Path(args.scene).read_text()))
            elif args.preset == "single":
                scene = single_person_scene(
                    n_frames=args.frames or 30,
                    point_jitter_m=args.point_jitter,
                    pixel_jitter_px=args.pixel_jitter,
                )
            else:
                scene = crossing_scene(
                    n_frames=args.frames or 10,
                    with_ghost=args.preset == "crossing-ghost",
                )
            model = make_toy_model(nring=12, trunk_stations=14, arm_stations=7)
            generate_synthetic(scene, args.seed, args.out, model=model)
            print(args.out)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
