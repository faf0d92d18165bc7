#!/usr/bin/env python3
"""
Synthetic Action Video Pipeline - Command Line
==============================================

One entry point for every stage, sharing a run config and seed:

    synth_cli.py validate      --config run.json
    synth_cli.py make-avatar   --config run.json --id alice --seed 3
    synth_cli.py prepare-pose  --config run.json --input walk.json --kind reference
    synth_cli.py animate       --config run.json --avatar alice.json --pose walk.json
    synth_cli.py composite     --config run.json --video out/videos/x --background bg.png
    synth_cli.py export-keypoints --config run.json --avatar alice.json --pose walk.json
    synth_cli.py capture       --config run.json --avatar alice.json
    synth_cli.py fit           --config run.json --avatar alice.json --target capture/ --mode both
    synth_cli.py gen-dataset   --config run.json --seed 7 --jobs 4
    synth_cli.py eval-baseline --config run.json
    synth_cli.py eval-shots    --config run.json --n-real 1

Exit status: 0 success, 1 input error, 2 internal failure. Diagnostics go to
standard error; outputs are files under the output root.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

from pydantic import ValidationError

from avatar_fitting import FIT_MODES, build_fit_target, fit_avatar, load_fit_target, write_fit_target
from avatar_model import build_avatar_from_spec, build_humanoid_avatar, dump_avatar
from compositor import composite_sequence, load_background
from dataset_generator import DatasetGenerator, count_preview, plan_jobs
from errors import ConfigurationError, InputError, SynthesisError, from_validation_error
from eval_harness import format_results, run_baseline, run_shot_curve, write_results
from motion_library import SKELETON_REF, identity_capture_motion
from pipeline_config import (
    ResolvedRunConfig,
    configure_logging,
    load_run_config,
    parse_resolution,
)
from pose_sequence import (
    NORMALIZATION_PRESETS,
    dump_keypoint_sequence,
    dump_pose_sequence,
    keypoints_from_pose,
    keypoints_to_pose,
    load_keypoint_sequence,
    load_pose_sequence,
    normalization_preset,
    resample,
)
from pydantic_models import ExperimentConfig, IdentityEntry
from splat_renderer import read_video, render_sequence, write_video
from utils_tracking import RunTracker

logger = logging.getLogger("synth_cli")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INTERNAL = 2

U64_MAX = 2**64 - 1


class _Parser(argparse.ArgumentParser):
    """Argument errors are input errors (exit 1), not argparse's exit 2."""

    def error(self, message):
        raise ConfigurationError("arguments", message)


def _u64(value: str) -> int:
    seed = int(value)
    if not 0 <= seed <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return seed


def _positive(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise ConfigurationError("input", f"file not found: {path}") from e


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def cmd_validate(run: ResolvedRunConfig, args) -> int:
    spec = run.dataset_spec()
    plan_jobs(spec)
    white, composited = count_preview(spec)
    print(
        f"config OK (seed {run.seed}): {len(spec.references):,} references x "
        f"{len(spec.identities):,} identities, g={spec.g} of {len(spec.backgrounds):,} backgrounds",
        file=sys.stderr,
    )
    print(f"white-background videos (n_T*n_A):   {white:,}", file=sys.stderr)
    print(f"image-background videos (n_T*n_A*g): {composited:,}", file=sys.stderr)
    return EXIT_OK


def cmd_make_avatar(run: ResolvedRunConfig, args) -> int:
    try:
        IdentityEntry(id=args.id, avatar=f"{args.id}.json")
    except ValidationError as e:
        raise from_validation_error(e, "--id") from e
    seed = args.avatar_seed if args.avatar_seed is not None else run.seed
    avatar = build_humanoid_avatar(args.id, seed, args.splats_per_bone)
    path = run.inside_output(Path("avatars") / f"{args.id}.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_avatar(avatar), encoding="utf-8")
    logger.info(f"Avatar '{args.id}' ({avatar.num_splats} splats) written to {path}")
    return EXIT_OK


def cmd_prepare_pose(run: ResolvedRunConfig, args) -> int:
    if args.kind == "identity":
        policy = run.config.normalization.identity
    elif args.kind == "reference":
        policy = run.config.normalization.reference
    else:
        policy = normalization_preset(args.kind)

    if args.keypoints:
        if not args.avatar:
            raise ConfigurationError("--avatar", "keypoint input needs the avatar whose skeleton to fit")
        avatar = build_avatar_from_spec(_read(args.avatar), args.avatar)
        keypoints = load_keypoint_sequence(_read(args.input), args.input)
        sequence = keypoints_to_pose(keypoints, avatar.skeleton)
    else:
        sequence = load_pose_sequence(_read(args.input), args.input)

    normalized = resample(sequence, policy)
    path = run.inside_output(Path("poses") / f"{Path(args.input).stem}.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_pose_sequence(normalized), encoding="utf-8")
    logger.info(
        f"Pose {args.input}: {sequence.num_frames} frames @ {sequence.fps:g} -> "
        f"{normalized.num_frames} @ {normalized.fps:g}, written to {path}"
    )
    return EXIT_OK


def cmd_animate(run: ResolvedRunConfig, args) -> int:
    avatar = build_avatar_from_spec(_read(args.avatar), args.avatar)
    sequence = load_pose_sequence(_read(args.pose), args.pose)
    frames = render_sequence(avatar, sequence, run.camera, max_workers=run.max_workers)
    directory = run.inside_output(Path("videos") / f"{avatar.id}__{Path(args.pose).stem}")
    write_video(directory, frames, sequence.fps)
    logger.info(f"Rendered {len(frames)} frames to {directory}")
    return EXIT_OK


def cmd_composite(run: ResolvedRunConfig, args) -> int:
    frames, meta = read_video(args.video)
    background = load_background(args.background)
    directory = run.inside_output(Path("composited") / f"{Path(args.video).name}__{background.id}")
    composite_sequence(
        frames, background, run.config.placement, directory, meta.get("fps", 1.0), run.max_workers
    )
    logger.info(f"Composited {len(frames)} frames over '{background.id}' to {directory}")
    return EXIT_OK


def cmd_export_keypoints(run: ResolvedRunConfig, args) -> int:
    avatar = build_avatar_from_spec(_read(args.avatar), args.avatar)
    sequence = load_pose_sequence(_read(args.pose), args.pose)
    keypoints = keypoints_from_pose(sequence, avatar.skeleton)
    path = run.inside_output(Path("keypoints") / f"{Path(args.pose).stem}.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_keypoint_sequence(keypoints), encoding="utf-8")
    logger.info(f"{keypoints.num_frames} keypoint frames written to {path}")
    return EXIT_OK


def cmd_capture(run: ResolvedRunConfig, args) -> int:
    avatar = build_avatar_from_spec(_read(args.avatar), args.avatar)
    policy = run.config.normalization.identity
    motion = identity_capture_motion(avatar.skeleton, policy.target_seconds, policy.target_fps)
    target = build_fit_target(avatar, motion, run.camera, max_workers=run.max_workers)
    directory = write_fit_target(run.inside_output(Path("captures") / avatar.id), target, SKELETON_REF)
    logger.info(f"Identity capture of '{avatar.id}': {len(target)} frames written to {directory}")
    return EXIT_OK


def cmd_fit(run: ResolvedRunConfig, args) -> int:
    avatar = build_avatar_from_spec(_read(args.avatar), args.avatar)
    target = load_fit_target(args.target)
    fitted, reports = fit_avatar(avatar, target, args.mode, args.steps, run.max_workers)

    directory = run.inside_output("fitted")
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{fitted.id}.json").write_text(dump_avatar(fitted), encoding="utf-8")
    report = {
        "avatar": fitted.id,
        "mode": args.mode,
        "seed": run.seed,
        "reports": [r.model_dump(mode="json") for r in reports],
    }
    (directory / f"{fitted.id}_fit_report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    for r in reports:
        logger.info(f"loss {r.initial_loss:.6g} -> {r.final_loss:.6g} ({r.iterations} iterations)")
    return EXIT_OK


def cmd_gen_dataset(run: ResolvedRunConfig, args) -> int:
    spec = run.dataset_spec()
    tracker = RunTracker("gen-dataset")
    manifest = DatasetGenerator(spec, run.path.parent, run.max_workers, tracker).generate()
    if manifest.errors:
        logger.warning(f"{len(manifest.errors)} jobs failed; see the manifest's error section")
    return EXIT_OK


def _manifests(run: ResolvedRunConfig):
    evaluation = run.config.evaluation
    if evaluation is None:
        raise ConfigurationError("evaluation", "eval subcommands need evaluation.real_manifest and synthetic_manifest")
    base = run.path.parent
    return (base / evaluation.real_manifest).resolve(), (base / evaluation.synthetic_manifest).resolve()


def cmd_eval_baseline(run: ResolvedRunConfig, args) -> int:
    real, synthetic = _manifests(run)
    results = run_baseline(run.config.experiment, real, synthetic, run.seed, run.max_workers)
    write_results(results, run.inside_output(Path("eval") / "baseline"))
    sys.stderr.write(format_results(results))
    return EXIT_OK


def cmd_eval_shots(run: ResolvedRunConfig, args) -> int:
    config = run.config.experiment
    if args.n_real is not None:
        try:
            config = ExperimentConfig.model_validate({**config.model_dump(), "n_real": args.n_real})
        except ValidationError as e:
            raise from_validation_error(e, "--n-real") from e
    real, synthetic = _manifests(run)
    results = run_shot_curve(config, real, synthetic, run.seed, run.max_workers)
    write_results(results, run.inside_output(Path("eval") / results.experiment))
    sys.stderr.write(format_results(results))
    return EXIT_OK


COMMANDS: Dict[str, Callable[[ResolvedRunConfig, argparse.Namespace], int]] = {
    "validate": cmd_validate,
    "make-avatar": cmd_make_avatar,
    "prepare-pose": cmd_prepare_pose,
    "animate": cmd_animate,
    "composite": cmd_composite,
    "export-keypoints": cmd_export_keypoints,
    "capture": cmd_capture,
    "fit": cmd_fit,
    "gen-dataset": cmd_gen_dataset,
    "eval-baseline": cmd_eval_baseline,
    "eval-shots": cmd_eval_shots,
}


# ============================================================================
# PARSER
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="Run config JSON")
    common.add_argument("--seed", type=_u64, default=None, help="Override the config seed")
    common.add_argument("--out", default=None, help="Override the output root")
    common.add_argument("--jobs", type=_positive, default=None, help="Worker cap")
    common.add_argument("--resolution", default=None, help="Frame size WxH")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    parser = _Parser(
        prog="synth_cli.py",
        description="Synthetic human-action video pipeline",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    sub.add_parser("validate", parents=[common], help="Check the config and preview dataset counts")

    p = sub.add_parser("make-avatar", parents=[common], help="Build a procedural avatar")
    p.add_argument("--id", required=True, help="Avatar id")
    p.add_argument("--avatar-seed", type=_u64, default=None, help="Appearance seed (default: run seed)")
    p.add_argument("--splats-per-bone", type=_positive, default=6)

    p = sub.add_parser("prepare-pose", parents=[common], help="Normalize a pose or keypoint file")
    p.add_argument("--input", required=True, help="Pose file (or keypoint file with --keypoints)")
    p.add_argument("--keypoints", action="store_true", help="Input is a keypoint file")
    p.add_argument("--avatar", default=None, help="Avatar whose skeleton fits the keypoints")
    p.add_argument(
        "--kind", default="reference", choices=sorted(NORMALIZATION_PRESETS),
        help="Normalization policy (identity/reference use the config's policies)",
    )

    p = sub.add_parser("animate", parents=[common], help="Render a white-background video")
    p.add_argument("--avatar", required=True)
    p.add_argument("--pose", required=True)

    p = sub.add_parser("composite", parents=[common], help="Composite a video over a background")
    p.add_argument("--video", required=True, help="White-background video directory")
    p.add_argument("--background", required=True, help="Background PNG")

    p = sub.add_parser("export-keypoints", parents=[common], help="Write 3-D joint positions of a pose")
    p.add_argument("--avatar", required=True, help="Avatar whose skeleton poses the joints")
    p.add_argument("--pose", required=True)

    p = sub.add_parser("capture", parents=[common], help="Render an identity-capture fit target")
    p.add_argument("--avatar", required=True)

    p = sub.add_parser("fit", parents=[common], help="Fit avatar appearance to a target")
    p.add_argument("--avatar", required=True)
    p.add_argument("--target", required=True, help="Fit-target directory")
    p.add_argument("--mode", default="both", choices=FIT_MODES)
    p.add_argument("--steps", type=_positive, default=20, help="Opacity descent steps")

    sub.add_parser("gen-dataset", parents=[common], help="Generate the dataset and manifest")
    sub.add_parser("eval-baseline", parents=[common], help="Real-only vs real+synthetic")

    p = sub.add_parser("eval-shots", parents=[common], help="Accuracy over synthetic videos per class")
    p.add_argument("--n-real", type=int, default=None, help="Real videos per class (1 or 5)")

    return parser


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, run the subcommand, map failures to exit status."""
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level)
        resolution = parse_resolution(args.resolution) if args.resolution else None
        run = load_run_config(
            args.config, seed=args.seed, out=args.out, jobs=args.jobs, resolution=resolution
        )
        return COMMANDS[args.command](run, args)
    except InputError as e:
        logger.error(str(e))
        return EXIT_INPUT
    except SynthesisError as e:
        logger.error(str(e), exc_info=True)
        return EXIT_INTERNAL
    except Exception as e:
        logger.error(f"Internal failure: {type(e).__name__}: {e}", exc_info=True)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
