"""
Toy Benchmark
=============

A seeded, self-contained stand-in for the real action datasets:

- 8 scripted action classes, two disjoint sets of reference motions
- 5 synthetic identities over 8 backgrounds (g=4), clean camera
- 3 proxy-real identities over 4 held-out backgrounds (g=2) with camera
  jitter; the first one is used for training, the other two for testing

`run_toy_acceptance` checks the directional claims: synthetic data helps the
baseline, and more synthetic videos help in the one- and few-shot regimes.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from avatar_model import build_humanoid_avatar, build_humanoid_skeleton, dump_avatar
from compositor import make_procedural_background
from dataset_generator import DatasetGenerator, Manifest, derive_seed, write_manifest
from eval_harness import run_baseline, run_shot_curve
from motion_library import TOY_CLASSES, scripted_motion
from pose_sequence import dump_pose_sequence
from pydantic_models import (
    BackgroundEntry,
    CameraJitter,
    CameraModel,
    DatasetSpec,
    ExperimentConfig,
    ExperimentResults,
    IdentityEntry,
    NormalizationPolicy,
    ReferenceEntry,
)
from splat_renderer import default_camera
from utils_image import write_png
from utils_tracking import RunTracker

logger = logging.getLogger(__name__)

SECONDS = 2.0
FPS = 8.0
RESOLUTION = 64
SPLATS_PER_BONE = 4

SYNTHETIC_IDENTITIES = 5
REAL_IDENTITIES = ("R1", "R2", "R3")
SYNTHETIC_BACKGROUNDS = 8
REAL_BACKGROUNDS = 4
SYNTHETIC_G = 4
REAL_G = 2
REFERENCES_PER_CLASS = 10

CURVE_STEPS = [0, 50, 100, 150, 200]
FEW_SHOT_MIN_GAIN = 0.05
BASELINE_SLACK = 0.01


@dataclass
class ToyBenchmark:
    root: Path
    real_manifest: Path
    synthetic_manifest: Path
    classes: List[str]


@dataclass
class ToyAcceptance:
    """Outcome of the directional checks."""

    baseline: ExperimentResults
    few_shot: ExperimentResults
    one_shot: ExperimentResults
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _write_references(root: Path, prefix: str, seed: int, per_class: int) -> List[ReferenceEntry]:
    skeleton = build_humanoid_skeleton()
    poses = root / "poses"
    poses.mkdir(parents=True, exist_ok=True)
    entries = []
    for c, label in enumerate(TOY_CLASSES):
        for k in range(per_class):
            ref_id = f"{label}_{prefix}{k:02d}"
            sequence = scripted_motion(label, skeleton, derive_seed(seed, c, k), SECONDS, FPS)
            path = poses / f"{ref_id}.json"
            path.write_text(dump_pose_sequence(sequence), encoding="utf-8")
            entries.append(ReferenceEntry(id=ref_id, class_label=label, pose=str(path.relative_to(root))))
    return entries


def _write_identities(root: Path, ids: Sequence[str], seed: int) -> List[IdentityEntry]:
    avatars = root / "avatars"
    avatars.mkdir(parents=True, exist_ok=True)
    entries = []
    for n, avatar_id in enumerate(ids):
        avatar = build_humanoid_avatar(avatar_id, derive_seed(seed, n), SPLATS_PER_BONE)
        path = avatars / f"{avatar_id}.json"
        path.write_text(dump_avatar(avatar), encoding="utf-8")
        entries.append(IdentityEntry(id=avatar_id, avatar=str(path.relative_to(root))))
    return entries


def _write_backgrounds(root: Path, prefix: str, count: int, seed: int, size: int) -> List[BackgroundEntry]:
    directory = root / "backgrounds"
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for k in range(count):
        background = make_procedural_background(rng, size, size, f"{prefix}{k:02d}")
        path = directory / f"{background.id}.png"
        write_png(path, background.pixels)
        entries.append(BackgroundEntry(id=background.id, path=str(path.relative_to(root))))
    return entries


def build_toy_benchmark(
    root: Union[str, Path],
    seed: int = 0,
    resolution: int = RESOLUTION,
    references_per_class: int = REFERENCES_PER_CLASS,
    max_workers: int = 1
) -> ToyBenchmark:
    """
    Write inputs, generate the synthetic and proxy-real pools, merge manifests.

    Args:
        root: Output directory
        seed: Benchmark seed
        resolution: Square frame size
        references_per_class: Reference motions per class in each set
        max_workers: Worker cap for generation

    Returns:
        ToyBenchmark with both manifest paths
    """
    root = Path(root).resolve()
    logger.info(f"Building toy benchmark in {root} (seed {seed}, {resolution}px)")

    train_refs = _write_references(root, "a", derive_seed(seed, 1), references_per_class)
    test_refs = _write_references(root, "b", derive_seed(seed, 2), references_per_class)
    synthetic_ids = _write_identities(
        root, [f"S{n + 1}" for n in range(SYNTHETIC_IDENTITIES)], derive_seed(seed, 3)
    )
    real_ids = _write_identities(root, REAL_IDENTITIES, derive_seed(seed, 4))
    synthetic_bgs = _write_backgrounds(root, "bg", SYNTHETIC_BACKGROUNDS, derive_seed(seed, 5), resolution)
    real_bgs = _write_backgrounds(root, "real", REAL_BACKGROUNDS, derive_seed(seed, 6), resolution)

    camera = CameraModel(**default_camera(resolution, resolution).to_dict())
    normalization = NormalizationPolicy(target_seconds=SECONDS, target_fps=FPS)
    classes = list(TOY_CLASSES)

    def spec(refs, ids, bgs, g, spec_seed, output, jitter=None) -> DatasetSpec:
        return DatasetSpec(
            classes=classes,
            references=refs,
            identities=ids,
            backgrounds=bgs,
            g=g,
            seed=spec_seed,
            normalization=normalization,
            camera=camera,
            camera_jitter=jitter,
            output_root=output,
        )

    tracker = RunTracker("toy-benchmark")
    runs = {
        "synthetic": spec(train_refs, synthetic_ids, synthetic_bgs, SYNTHETIC_G, derive_seed(seed, 7), "synthetic"),
        "real/train": spec(
            train_refs, real_ids[:1], real_bgs, REAL_G, derive_seed(seed, 8), "real/train", CameraJitter()
        ),
        "real/test": spec(
            test_refs, real_ids[1:], real_bgs, REAL_G, derive_seed(seed, 9), "real/test", CameraJitter()
        ),
    }
    manifests = {}
    for name, dataset_spec in runs.items():
        (root / f"{name.replace('/', '_')}_spec.json").write_text(
            dataset_spec.model_dump_json(indent=2) + "\n", encoding="utf-8"
        )
        manifests[name] = DatasetGenerator(dataset_spec, root, max_workers, tracker).generate()

    merged = Manifest(
        [
            entry.model_copy(update={"frames_dir": f"{part}/{entry.frames_dir}"})
            for part in ("train", "test")
            for entry in manifests[f"real/{part}"].entries
        ],
        manifests["real/train"].errors + manifests["real/test"].errors,
    )
    real_manifest = write_manifest(root / "real" / "manifest.jsonl", merged)
    return ToyBenchmark(root, real_manifest, root / "synthetic" / "manifest.jsonl", classes)


def toy_config(n_real: int, n_background: int = 0, seeds: Sequence[int] = range(5)) -> ExperimentConfig:
    return ExperimentConfig(
        n_real=n_real,
        n_background=n_background,
        n_test=20,
        classes=list(TOY_CLASSES),
        seeds=list(seeds),
        curve_steps=CURVE_STEPS,
    )


def run_toy_acceptance(
    benchmark: ToyBenchmark,
    seeds: Sequence[int] = range(5),
    seed: int = 0,
    max_workers: int = 1
) -> ToyAcceptance:
    """Baseline (n_real=5, n_background=100), few-shot (n_real=5) and one-shot curves."""
    real, synthetic = benchmark.real_manifest, benchmark.synthetic_manifest
    baseline = run_baseline(toy_config(5, 100, seeds), real, synthetic, seed, max_workers)
    few_shot = run_shot_curve(toy_config(5, seeds=seeds), real, synthetic, seed, max_workers)
    one_shot = run_shot_curve(toy_config(1, seeds=seeds), real, synthetic, seed, max_workers)

    first, last = str(CURVE_STEPS[0]), str(CURVE_STEPS[-1])
    close_or_better = sum(
        row["real_plus_synthetic"] >= row["real_only"] - BASELINE_SLACK for row in baseline.per_seed
    )
    checks = {
        "baseline_synthetic_helps":
            baseline.mean["real_plus_synthetic"] > baseline.mean["real_only"],
        "baseline_per_seed":
            close_or_better >= len(baseline.per_seed) - 1,
        "few_shot_gain":
            few_shot.mean[last] - few_shot.mean[first] >= FEW_SHOT_MIN_GAIN,
        "one_shot_gain":
            one_shot.mean[last] > one_shot.mean[first],
    }
    for name, ok in checks.items():
        logger.info(f"Toy acceptance {name}: {'pass' if ok else 'FAIL'}")
    return ToyAcceptance(baseline, few_shot, one_shot, checks)
