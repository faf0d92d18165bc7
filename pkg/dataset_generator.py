"""
Synthetic Dataset Generator
===========================

Generation combinatorics: every (reference i, identity j) pair yields one
white-background video S(i,j) and g composited videos S(i,j,k) over
backgrounds sampled without replacement from the pool. Sampling is seeded by
a 64-bit split-mix of (seed, i, j), so outputs depend on positions in the
sorted id lists and never on execution order.

Manifests are JSON lines sorted by video_id, followed by an error block of
`{"error": {...}}` lines for jobs that failed.
"""

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from avatar_model import Avatar, build_avatar_from_spec
from compositor import BackgroundImage, composite_sequence, load_background
from errors import (
    BackgroundPoolError,
    ConfigurationError,
    DocumentFormatError,
    ManifestFormatError,
    SynthesisError,
    from_validation_error,
)
from pose_sequence import PoseSequence, load_pose_sequence, resample
from pydantic_models import DatasetSpec, ManifestEntry, ManifestErrorRecord
from splat_renderer import Camera, Framebuffer, render_sequence, write_video
from utils_parallel import ParallelMapper
from utils_image import read_frame_directory
from utils_tracking import RunTracker

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
ID_SEPARATOR = "__"
MANIFEST_FILE = "manifest.jsonl"
REPORT_FILE = "run_report.json"
JITTER_SALT = 0x4A49545445520001


# ============================================================================
# SEEDING
# ============================================================================

def splitmix64(value: int) -> int:
    """One split-mix-64 output for state `value` (64-bit wrap-around)."""
    z = (value + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(*values: int) -> int:
    """Fold values through split-mix: derive_seed(s, i, j) = sm(sm(sm(s) ^ i) ^ j)."""
    state = splitmix64(values[0] & MASK64)
    for value in values[1:]:
        state = splitmix64(state ^ (value & MASK64))
    return state


# ============================================================================
# JOB PLANNING
# ============================================================================

@dataclass(frozen=True)
class Job:
    """One video to produce."""

    kind: str
    i: int
    j: int
    k: Optional[int]
    reference_id: str
    class_label: str
    identity_id: str
    background_id: Optional[str]

    @property
    def video_id(self) -> str:
        parts = [self.reference_id, self.identity_id]
        if self.background_id is not None:
            parts.append(self.background_id)
        return ID_SEPARATOR.join(parts)


def count_preview(spec: DatasetSpec) -> Tuple[int, int]:
    """(n_T·n_A, n_T·n_A·g) without touching any file."""
    pairs = len(spec.references) * len(spec.identities)
    return pairs, pairs * spec.g


def sample_backgrounds(spec: DatasetSpec, i: int, j: int) -> List[str]:
    """
    g distinct background ids for pair (i, j).

    Drawn without replacement by a generator seeded with
    derive_seed(spec.seed, i, j); independent of call order.

    Raises:
        BackgroundPoolError: g exceeds the pool size
    """
    pool = spec.sorted_backgrounds
    if spec.g > len(pool):
        raise BackgroundPoolError(spec.g, len(pool))
    if spec.g == 0:
        return []
    rng = np.random.default_rng(derive_seed(spec.seed, i, j))
    picks = rng.choice(len(pool), size=spec.g, replace=False)
    return [pool[int(p)].id for p in picks]


def plan_jobs(spec: DatasetSpec) -> List[Job]:
    """
    Enumerate every job in lexicographic (i, j, k) order.

    For each pair the white job comes first, then its g composited jobs.

    Returns:
        n_T·n_A white jobs and n_T·n_A·g composited jobs

    Raises:
        BackgroundPoolError: g exceeds the pool size
    """
    if spec.g > len(spec.backgrounds):
        raise BackgroundPoolError(spec.g, len(spec.backgrounds))

    jobs: List[Job] = []
    for i, reference in enumerate(spec.sorted_references):
        for j, identity in enumerate(spec.sorted_identities):
            jobs.append(Job("white", i, j, None, reference.id, reference.class_label, identity.id, None))
            for k, background_id in enumerate(sample_backgrounds(spec, i, j)):
                jobs.append(Job(
                    "composited", i, j, k, reference.id, reference.class_label, identity.id, background_id
                ))
    logger.debug(f"Planned {len(jobs):,} jobs")
    return jobs


# ============================================================================
# MANIFEST
# ============================================================================

@dataclass
class Manifest:
    """Generated videos (sorted by video_id) and failed jobs (sorted by job_id)."""

    entries: List[ManifestEntry] = field(default_factory=list)
    errors: List[ManifestErrorRecord] = field(default_factory=list)

    def __post_init__(self):
        self.entries = sorted(self.entries, key=lambda e: e.video_id)
        self.errors = sorted(self.errors, key=lambda e: e.job_id)

    def __len__(self) -> int:
        return len(self.entries)

    def by_kind(self, kind: str) -> List[ManifestEntry]:
        return [entry for entry in self.entries if entry.kind == kind]


def _line(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


def write_manifest(path: Union[str, Path], manifest: Manifest) -> Path:
    """Write JSON lines (UTF-8, LF): entries by video_id, then the error block."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for entry in manifest.entries:
            f.write(_line(entry.model_dump(mode="json")))
        for error in manifest.errors:
            f.write(_line({"error": error.model_dump(mode="json")}))
    logger.info(f"Wrote manifest {path}: {len(manifest.entries):,} entries, {len(manifest.errors)} errors")
    return path


def read_manifest(path: Union[str, Path]) -> Manifest:
    """
    Read a manifest.

    Raises:
        ManifestFormatError: unparsable or invalid line, or duplicate
            video_id (named by line number)
    """
    path = Path(path)
    entries: List[ManifestEntry] = []
    errors: List[ManifestErrorRecord] = []
    seen: Dict[str, int] = {}

    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise DocumentFormatError(str(path), "manifest not found") from e

    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestFormatError(str(path), number, f"invalid JSON ({e.msg})") from e
        try:
            if isinstance(payload, dict) and set(payload) == {"error"}:
                errors.append(ManifestErrorRecord.model_validate(payload["error"]))
                continue
            entry = ManifestEntry.model_validate(payload)
        except ValidationError as e:
            raise ManifestFormatError(str(path), number, str(from_validation_error(e, "entry").message)) from e
        if entry.video_id in seen:
            raise ManifestFormatError(
                str(path), number, f"duplicate video_id '{entry.video_id}' (first on line {seen[entry.video_id]})"
            )
        seen[entry.video_id] = number
        entries.append(entry)

    return Manifest(entries, errors)


# ============================================================================
# SPEC FILES
# ============================================================================

def load_dataset_spec(document: Union[str, bytes, Mapping[str, Any]], source: str = "spec") -> DatasetSpec:
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise DocumentFormatError(source, f"invalid JSON ({e.msg}, line {e.lineno})") from e
    try:
        return DatasetSpec.model_validate(document)
    except ValidationError as e:
        raise from_validation_error(e, source) from e


def _inside(root: Path, path: Path) -> Path:
    resolved = path.resolve()
    if resolved != root and root not in resolved.parents:
        raise ConfigurationError("output_root", f"refusing to write outside {root}: {resolved}")
    return resolved


# ============================================================================
# GENERATION
# ============================================================================

class DatasetGenerator:
    """
    Executes a DatasetSpec.

    Inputs (poses, avatars, backgrounds) are loaded lazily and cached; each
    (i, j) pair is one unit of parallel work, and every job inside it is
    isolated so one failure never aborts the rest.
    """

    def __init__(
        self,
        spec: DatasetSpec,
        base_dir: Optional[Union[str, Path]] = None,
        max_workers: int = 1,
        tracker: Optional[RunTracker] = None
    ):
        self.spec = spec
        self.base_dir = Path(base_dir or ".").resolve()
        self.max_workers = max_workers
        self.tracker = tracker or RunTracker("gen-dataset")
        self.output_root = self._resolve(spec.output_root)
        self.camera = Camera.from_model(spec.camera)
        self._backgrounds = {b.id: b for b in spec.backgrounds}
        self._pose = lru_cache(maxsize=None)(self._load_pose)
        self._avatar = lru_cache(maxsize=None)(self._load_avatar)
        self._background = lru_cache(maxsize=None)(self._load_background)

    def _resolve(self, path: str) -> Path:
        p = Path(path)
        return (p if p.is_absolute() else self.base_dir / p).resolve()

    def _load_pose(self, path: str) -> PoseSequence:
        resolved = self._resolve(path)
        sequence = load_pose_sequence(resolved.read_text(encoding="utf-8"), str(resolved))
        return resample(sequence, self.spec.normalization)

    def _load_avatar(self, path: str) -> Avatar:
        resolved = self._resolve(path)
        return build_avatar_from_spec(resolved.read_text(encoding="utf-8"), str(resolved))

    def _load_background(self, background_id: str) -> BackgroundImage:
        background = load_background(self._resolve(self._backgrounds[background_id].path))
        return BackgroundImage(background_id, background.pixels)

    def camera_for(self, i: int, j: int) -> Camera:
        """Spec camera, jittered per pair when the spec asks for it."""
        jitter = self.spec.camera_jitter
        if jitter is None:
            return self.camera
        rng = np.random.default_rng(derive_seed(self.spec.seed, i, j, JITTER_SALT))
        return self.camera.jittered(rng, jitter.focal_frac, jitter.orientation_deg)

    def _entry(self, job: Job, num_frames: int) -> ManifestEntry:
        return ManifestEntry(
            video_id=job.video_id,
            kind=job.kind,
            class_label=job.class_label,
            reference_id=job.reference_id,
            identity_id=job.identity_id,
            background_id=job.background_id,
            frames_dir=job.video_id,
            fps=self.spec.normalization.target_fps,
            num_frames=num_frames,
            seed=self.spec.seed,
        )

    @staticmethod
    def _error(job: Job, exc: BaseException) -> ManifestErrorRecord:
        message = exc.message if isinstance(exc, SynthesisError) else str(exc)
        return ManifestErrorRecord(
            job_id=job.video_id, kind=job.kind, error_type=type(exc).__name__, message=message
        )

    def _attempt(self, job: Job, work: Callable[[], ManifestEntry]) -> Union[ManifestEntry, ManifestErrorRecord]:
        """Run one job under the tracker; a failure becomes an error record."""
        try:
            with self.tracker.track(job.video_id, job.kind):
                return work()
        except Exception as e:
            logger.warning(f"Job {job.video_id} failed: {type(e).__name__}: {e}")
            return self._error(job, e)

    def _render_white(self, job: Job, rendered: List[List[Framebuffer]]) -> ManifestEntry:
        reference = next(r for r in self.spec.references if r.id == job.reference_id)
        identity = next(a for a in self.spec.identities if a.id == job.identity_id)
        sequence = self._pose(reference.pose)
        avatar = self._avatar(identity.avatar)
        frames = render_sequence(avatar, sequence, self.camera_for(job.i, job.j))
        write_video(_inside(self.output_root, self.output_root / job.video_id), frames, sequence.fps)
        rendered.append(frames)
        return self._entry(job, len(frames))

    def _composite(self, job: Job, white: Job, rendered: List[List[Framebuffer]]) -> ManifestEntry:
        if not rendered:
            raise SynthesisError(f"white video {white.video_id} failed")
        frames = rendered[0]
        composite_sequence(
            frames,
            self._background(job.background_id),
            self.spec.placement,
            directory=_inside(self.output_root, self.output_root / job.video_id),
            fps=self.spec.normalization.target_fps,
        )
        return self._entry(job, len(frames))

    def _run_pair(self, jobs: Sequence[Job]) -> List[Union[ManifestEntry, ManifestErrorRecord]]:
        white, composited = jobs[0], jobs[1:]
        rendered: List[List[Framebuffer]] = []
        results = [self._attempt(white, lambda: self._render_white(white, rendered))]
        for job in composited:
            results.append(self._attempt(job, lambda job=job: self._composite(job, white, rendered)))
        return results

    def generate(self) -> Manifest:
        """
        Run every planned job and write the manifest and run report.

        Returns:
            Manifest of produced videos plus the error section
        """
        jobs = plan_jobs(self.spec)
        pairs: Dict[Tuple[int, int], List[Job]] = {}
        for job in jobs:
            pairs.setdefault((job.i, job.j), []).append(job)
        white, composited = count_preview(self.spec)
        logger.info(
            f"Generating {white:,} white + {composited:,} composited videos into {self.output_root}"
        )

        self.output_root.mkdir(parents=True, exist_ok=True)
        mapper = ParallelMapper(
            self.max_workers,
            progress_callback=lambda done, total, _: logger.debug(f"{done}/{total} pairs done"),
        )
        groups = list(pairs.values())
        results: List[Union[ManifestEntry, ManifestErrorRecord]] = []
        for outcome in mapper.run_isolated(self._run_pair, groups, "pairs"):
            if outcome.success:
                results.extend(outcome.value)
            else:
                results.extend(self._error(job, outcome.error) for job in groups[outcome.index])

        entries = [r for r in results if isinstance(r, ManifestEntry)]
        errors = [r for r in results if isinstance(r, ManifestErrorRecord)]
        manifest = Manifest(entries, errors)

        write_manifest(self.output_root / MANIFEST_FILE, manifest)
        self.tracker.export_report(self.output_root / REPORT_FILE)
        self.tracker.log_summary()
        return manifest


def generate(
    spec: DatasetSpec,
    base_dir: Optional[Union[str, Path]] = None,
    max_workers: int = 1
) -> Manifest:
    """Execute a dataset spec; see DatasetGenerator."""
    return DatasetGenerator(spec, base_dir, max_workers).generate()


def video_frames(manifest_path: Union[str, Path], entry: ManifestEntry) -> List[np.ndarray]:
    """RGB frames of a manifest entry (white videos as rendered over their background)."""
    directory = Path(manifest_path).parent / entry.frames_dir
    _, frames = read_frame_directory(directory, mode="RGB")
    return frames
