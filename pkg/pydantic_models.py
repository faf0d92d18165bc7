"""
Pydantic Data Models
====================

File formats of the pipeline as validated models: avatar, pose and keypoint
documents, camera and policies, dataset specs, manifests, experiment configs
and run configs. Unknown fields are rejected everywhere.
"""

import logging
import re
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

Vec2 = Tuple[float, float]
Vec3 = Tuple[float, float, float]
Quat = Tuple[float, float, float, float]

U64_MAX = 2**64 - 1
ID_PATTERN = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


class StrictModel(BaseModel):
    """Base model: unknown fields rejected, no NaN/inf, immutable."""

    model_config = ConfigDict(extra="forbid", allow_inf_nan=False, frozen=True)


def _check_id(value: str) -> str:
    if not ID_PATTERN.match(value):
        raise ValueError(f"invalid id '{value}' (letters, digits, '_', '.', '-')")
    if "__" in value:
        raise ValueError(f"invalid id '{value}' ('__' is reserved as a separator)")
    return value


def _check_unique(values: List[str], what: str) -> None:
    seen = set()
    for value in values:
        if value in seen:
            raise ValueError(f"duplicate {what} '{value}'")
        seen.add(value)


# ============================================================================
# AVATAR FILE
# ============================================================================

class JointModel(StrictModel):
    """One joint of a skeleton; offset is the canonical translation from the parent."""

    name: str = Field(min_length=1)
    parent: Optional[int] = None
    offset: Vec3


class SkeletonModel(StrictModel):
    """Joint hierarchy in topological order."""

    joints: List[JointModel]

    @model_validator(mode="after")
    def check_topology(self):
        """Exactly one root, parents before children, unique names, J ≥ 2."""
        if len(self.joints) < 2:
            raise ValueError(f"skeleton needs at least 2 joints, got {len(self.joints)}")

        roots = [i for i, joint in enumerate(self.joints) if joint.parent is None]
        if len(roots) != 1:
            raise ValueError(f"skeleton needs exactly one root joint, found {len(roots)}")

        for index, joint in enumerate(self.joints):
            if joint.parent is not None and not 0 <= joint.parent < index:
                raise ValueError(
                    f"joint {index} ('{joint.name}') has parent {joint.parent}; "
                    f"parents must precede children"
                )

        _check_unique([joint.name for joint in self.joints], "joint name")
        return self


class SplatModel(StrictModel):
    """A canonical-space Gaussian splat with skinning weights."""

    mu: Vec3
    scale: Vec3
    rot: Quat
    color: Vec3
    opacity: float
    weights: List[Tuple[int, float]] = Field(min_length=1, max_length=4)

    @field_validator("scale")
    @classmethod
    def check_scale(cls, v):
        if not all(1e-5 <= s <= 10.0 for s in v):
            raise ValueError("scale out of range [1e-5, 10]")
        return v

    @field_validator("rot")
    @classmethod
    def check_rot(cls, v):
        norm = sum(c * c for c in v) ** 0.5
        if abs(norm - 1.0) > 1e-3:
            raise ValueError(f"rot is not a unit quaternion (norm {norm:.6g})")
        return v

    @field_validator("color")
    @classmethod
    def check_color(cls, v):
        if not all(0.0 <= c <= 1.0 for c in v):
            raise ValueError("color out of range [0, 1]")
        return v

    @field_validator("opacity")
    @classmethod
    def check_opacity(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("opacity out of range")
        return v

    @field_validator("weights")
    @classmethod
    def check_weights(cls, v):
        joints = [joint for joint, _ in v]
        if len(set(joints)) != len(joints):
            raise ValueError("weights reference the same joint twice")
        if any(w < 0.0 for _, w in v):
            raise ValueError("weights must be non-negative")
        total = sum(w for _, w in v)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"weights must sum to 1 (sum {total:.9g})")
        return v


class AvatarModel(StrictModel):
    """Avatar file: {"version":1, "id", "skeleton", "splats"}."""

    version: Literal[1]
    id: str
    skeleton: SkeletonModel
    splats: List[SplatModel] = Field(min_length=1)

    @field_validator("id")
    @classmethod
    def check_id(cls, v):
        return _check_id(v)


# ============================================================================
# POSE AND KEYPOINT FILES
# ============================================================================

class PoseFrameModel(StrictModel):
    """One frame: root translation plus one local rotation per joint."""

    root_t: Vec3
    rots: List[Quat] = Field(min_length=1)


class PoseSequenceModel(StrictModel):
    """Pose file: {"version":1, "fps", "skeleton_ref", "frames"}."""

    version: Literal[1]
    fps: float = Field(gt=0)
    skeleton_ref: str = Field(min_length=1)
    frames: List[PoseFrameModel] = Field(min_length=1)


class KeypointSequenceModel(StrictModel):
    """Keypoint file: {"version":1, "fps", "frames": [[[x,y,z], ...], ...]}."""

    version: Literal[1]
    fps: float = Field(gt=0)
    frames: List[List[Vec3]] = Field(min_length=1)


# ============================================================================
# CAMERA AND POLICIES
# ============================================================================

class CameraModel(StrictModel):
    """Pinhole camera; orientation rotates camera axes (x right, y down, z forward) to world."""

    position: Vec3
    orientation: Quat
    focal: float = Field(gt=0, description="Focal length in pixels")
    principal: Vec2
    width: int = Field(ge=1)
    height: int = Field(ge=1)

    @field_validator("orientation")
    @classmethod
    def check_orientation(cls, v):
        norm = sum(c * c for c in v) ** 0.5
        if abs(norm - 1.0) > 1e-3:
            raise ValueError(f"orientation is not a unit quaternion (norm {norm:.6g})")
        return v


class NormalizationPolicy(StrictModel):
    """Target length and frame rate for pose sequences."""

    target_seconds: float = Field(gt=0)
    target_fps: float = Field(gt=0)

    @model_validator(mode="after")
    def check_frame_count(self):
        if int(self.target_seconds * self.target_fps + 0.5) < 2:
            raise ValueError("target_seconds·target_fps must round to at least 2 frames")
        return self

    @property
    def num_frames(self) -> int:
        """round(target_seconds·target_fps), halves rounded up."""
        return int(self.target_seconds * self.target_fps + 0.5)


class PlacementPolicy(StrictModel):
    """Where composited avatars stand in the background image."""

    ground_line: float = Field(default=0.85, gt=0, le=1)
    subject_height_frac: float = Field(default=0.6, gt=0, le=1)
    horizontal_anchor: float = Field(default=0.5, gt=0, le=1)


class CameraJitter(StrictModel):
    """Seeded per-video camera perturbation used for proxy-real data."""

    focal_frac: float = Field(default=0.05, ge=0, le=0.5)
    orientation_deg: float = Field(default=3.0, ge=0, le=30)


# ============================================================================
# DATASET SPEC AND MANIFEST
# ============================================================================

class ReferenceEntry(StrictModel):
    """A reference motion: id, action class, pose file."""

    id: str
    class_label: str = Field(min_length=1)
    pose: str = Field(min_length=1, description="Pose file path")

    @field_validator("id")
    @classmethod
    def check_id(cls, v):
        return _check_id(v)


class IdentityEntry(StrictModel):
    """A novel identity: id and avatar file."""

    id: str
    avatar: str = Field(min_length=1, description="Avatar file path")

    @field_validator("id")
    @classmethod
    def check_id(cls, v):
        return _check_id(v)


class BackgroundEntry(StrictModel):
    """A background image: id (file stem) and PNG path."""

    id: str
    path: str = Field(min_length=1)

    @field_validator("id")
    @classmethod
    def check_id(cls, v):
        return _check_id(v)


class DatasetSpec(StrictModel):
    """Generation plan: references × identities × g sampled backgrounds."""

    version: Literal[1] = 1
    classes: List[str] = Field(default_factory=list)
    references: List[ReferenceEntry] = Field(default_factory=list)
    identities: List[IdentityEntry] = Field(default_factory=list)
    backgrounds: List[BackgroundEntry] = Field(default_factory=list)
    g: int = Field(ge=0)
    seed: int = Field(ge=0, le=U64_MAX)
    normalization: NormalizationPolicy
    camera: CameraModel
    placement: PlacementPolicy = Field(default_factory=PlacementPolicy)
    camera_jitter: Optional[CameraJitter] = None
    output_root: str = Field(min_length=1)

    @model_validator(mode="after")
    def check_sets(self):
        """Unique ids; every reference labelled with a known class; every class used."""
        _check_unique([r.id for r in self.references], "reference id")
        _check_unique([i.id for i in self.identities], "identity id")
        _check_unique([b.id for b in self.backgrounds], "background id")
        _check_unique(self.classes, "class label")

        known = set(self.classes)
        for reference in self.references:
            if reference.class_label not in known:
                raise ValueError(
                    f"reference '{reference.id}' has unknown class '{reference.class_label}'"
                )
        used = {r.class_label for r in self.references}
        missing = [c for c in self.classes if c not in used]
        if missing:
            raise ValueError(f"classes without references: {', '.join(missing)}")
        return self

    @property
    def sorted_references(self) -> List[ReferenceEntry]:
        return sorted(self.references, key=lambda r: r.id)

    @property
    def sorted_identities(self) -> List[IdentityEntry]:
        return sorted(self.identities, key=lambda i: i.id)

    @property
    def sorted_backgrounds(self) -> List[BackgroundEntry]:
        return sorted(self.backgrounds, key=lambda b: b.id)


class ManifestEntry(StrictModel):
    """One generated video."""

    video_id: str = Field(min_length=1)
    kind: Literal["white", "composited"]
    class_label: str
    reference_id: str
    identity_id: str
    background_id: Optional[str] = None
    frames_dir: str
    fps: float = Field(gt=0)
    num_frames: int = Field(ge=1)
    seed: int = Field(ge=0, le=U64_MAX)

    @model_validator(mode="after")
    def check_background(self):
        if (self.kind == "composited") != (self.background_id is not None):
            raise ValueError("background_id must be present exactly for composited videos")
        return self


class ManifestErrorRecord(StrictModel):
    """A job that failed during generation."""

    job_id: str
    kind: Literal["white", "composited"]
    error_type: str
    message: str


# ============================================================================
# FITTING AND EXPERIMENTS
# ============================================================================

class FitReport(StrictModel):
    """Outcome of an appearance fit."""

    initial_loss: float = Field(ge=0)
    final_loss: float = Field(ge=0)
    iterations: int = Field(ge=0)
    converged: bool
    history: List[float] = Field(
        default_factory=list, description="Loss before the first step and after every accepted step"
    )

    @model_validator(mode="after")
    def check_monotone(self):
        if self.final_loss > self.initial_loss:
            raise ValueError("final_loss must not exceed initial_loss")
        return self


class ExperimentConfig(StrictModel):
    """Protocol counts of the baseline and shot experiments."""

    n_real: int = Field(default=225, ge=0)
    n_background: int = Field(default=225, ge=0)
    n_test: int = Field(default=50, ge=1)
    classes: List[str] = Field(default_factory=list)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    curve_steps: List[int] = Field(default_factory=lambda: [0, 50, 100, 150, 200])
    test_identities: Optional[List[str]] = None
    num_samples: int = Field(default=16, ge=2)
    learning_rate: float = Field(default=0.1, gt=0)
    epochs: int = Field(default=500, ge=1)
    l2: float = Field(default=1e-4, ge=0)

    @field_validator("curve_steps")
    @classmethod
    def check_steps(cls, v):
        if any(step < 0 for step in v):
            raise ValueError("curve steps must be non-negative")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("curve steps must be strictly increasing")
        return v

    @field_validator("seeds")
    @classmethod
    def check_seeds(cls, v):
        if any(not 0 <= s <= U64_MAX for s in v):
            raise ValueError("seeds must be unsigned 64-bit integers")
        return v


class ExperimentResults(StrictModel):
    """results.json of an evaluation run."""

    experiment: str
    seed: int
    config: Dict[str, Any]
    per_seed: List[Dict[str, Any]]
    mean: Dict[str, float]
    std: Dict[str, float]


# ============================================================================
# RUN CONFIG
# ============================================================================

class PathsConfig(StrictModel):
    avatars_dir: str
    poses_dir: str
    backgrounds_dir: str
    output_root: str


class NormalizationConfig(StrictModel):
    identity: NormalizationPolicy = Field(
        default_factory=lambda: NormalizationPolicy(target_seconds=18.0, target_fps=18.0)
    )
    reference: NormalizationPolicy = Field(
        default_factory=lambda: NormalizationPolicy(target_seconds=20.0, target_fps=25.0)
    )


class ReferenceConfigEntry(StrictModel):
    """Reference listed in a run config; pose path relative to poses_dir."""

    id: str
    class_label: str = Field(min_length=1)
    pose: str = Field(min_length=1)

    @field_validator("id")
    @classmethod
    def check_id(cls, v):
        return _check_id(v)


class DatasetConfig(StrictModel):
    classes: List[str] = Field(default_factory=list)
    class_set: Optional[str] = Field(
        default=None, description="Named class list used when classes is empty"
    )
    references: List[ReferenceConfigEntry] = Field(default_factory=list)
    identities: Optional[List[str]] = Field(
        default=None, description="Avatar ids to use; default every avatar in avatars_dir"
    )
    g: int = Field(default=3, ge=0)
    camera_jitter: Optional[CameraJitter] = None


class EvaluationConfig(StrictModel):
    real_manifest: str
    synthetic_manifest: str


class RunConfig(StrictModel):
    """Run configuration file shared by every subcommand."""

    version: Literal[1]
    seed: int = Field(ge=0, le=U64_MAX)
    paths: PathsConfig
    normalization: NormalizationConfig = Field(default_factory=NormalizationConfig)
    camera: CameraModel
    placement: PlacementPolicy = Field(default_factory=PlacementPolicy)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)
    evaluation: Optional[EvaluationConfig] = None
