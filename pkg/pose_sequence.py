"""
Pose Sequences
==============

Reference and identity-capture motion as joint rotations over time:

1. Pose and keypoint file loading / saving
2. Normalisation to a constant length and frame rate (slerp resampling)
3. Keypoint tracks to joint rotations by bone-direction alignment
4. Named normalisation presets and the evaluated class lists
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Mapping, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from avatar_model import Pose, Skeleton, forward_kinematics, joint_positions
from errors import (
    ConfigurationError,
    DegenerateBoneError,
    DimensionMismatchError,
    DocumentFormatError,
    InvariantViolationError,
    from_validation_error,
)
from pydantic_models import KeypointSequenceModel, NormalizationPolicy, PoseSequenceModel
from utils_quaternion import (
    minimal_rotation,
    normalize_quaternions,
    quat_to_matrix,
    slerp,
)

logger = logging.getLogger(__name__)

MIN_BONE_LENGTH = 1e-6

NORMALIZATION_PRESETS: Dict[str, Tuple[float, float]] = {
    "identity": (18.0, 18.0),
    "reference": (20.0, 25.0),
    "20s@20fps": (20.0, 20.0),
    "20s@18fps": (20.0, 18.0),
}

ACTION_CLASS_SETS: Dict[str, List[str]] = {
    "toyota_smarthome": [
        "Cook.cut", "Cook.stir", "Cook.Usestove", "Drink.Frombottle",
        "Drink.Fromcan", "Drink.Fromcup", "Eat.snack", "Getup", "Laydown",
        "Pour.Fromkettle", "Pour.Frombottle", "Sitdown", "Walk",
        "Usetelephone", "Maketea.Insertteabag", "Enter",
    ],
    "ntu_rgbd": [
        "drink water", "eat meal", "brush teeth", "pick up", "throw",
        "sit down", "stand up", "clapping", "hand waving", "kicking something",
        "jump up", "point to something", "nod head/bow", "salute",
        "put palms together", "cross hands in front",
    ],
}


def normalization_preset(name: str) -> NormalizationPolicy:
    """NormalizationPolicy for a preset name ("identity", "reference", ...)."""
    if name not in NORMALIZATION_PRESETS:
        raise ConfigurationError(
            "normalization",
            f"unknown preset '{name}' (known: {', '.join(sorted(NORMALIZATION_PRESETS))})"
        )
    seconds, fps = NORMALIZATION_PRESETS[name]
    return NormalizationPolicy(target_seconds=seconds, target_fps=fps)


# ============================================================================
# SEQUENCE TYPES
# ============================================================================

@dataclass(frozen=True, eq=False)
class PoseSequence:
    """
    Fixed-rate pose track.

    Attributes:
        fps: Frames per second
        skeleton_ref: Id of the skeleton the rotations belong to
        root_t: (F, 3) root displacements
        rots: (F, J, 4) local joint rotations (w, x, y, z)
    """

    fps: float
    skeleton_ref: str
    root_t: np.ndarray
    rots: np.ndarray

    def __post_init__(self):
        root_t = np.array(self.root_t, dtype=np.float64)
        rots = np.array(self.rots, dtype=np.float64)
        if not self.fps > 0:
            raise InvariantViolationError("fps", "must be positive")
        if rots.ndim != 3 or rots.shape[2] != 4 or len(rots) < 1:
            raise DimensionMismatchError("sequence rotations", "(F ≥ 1, J, 4)", rots.shape)
        if root_t.shape != (len(rots), 3):
            raise DimensionMismatchError("sequence root_t", (len(rots), 3), root_t.shape)
        root_t.setflags(write=False)
        rots.setflags(write=False)
        object.__setattr__(self, "fps", float(self.fps))
        object.__setattr__(self, "root_t", root_t)
        object.__setattr__(self, "rots", rots)

    @classmethod
    def from_poses(cls, poses: Sequence[Pose], fps: float, skeleton_ref: str) -> "PoseSequence":
        if not poses:
            raise InvariantViolationError("frames", "at least one frame required")
        joints = poses[0].num_joints
        for k, pose in enumerate(poses):
            if pose.num_joints != joints:
                raise InvariantViolationError(
                    f"frames.{k}.rots", f"expected {joints} rotations, got {pose.num_joints}"
                )
        return cls(
            fps=fps,
            skeleton_ref=skeleton_ref,
            root_t=np.stack([p.root_t for p in poses]),
            rots=np.stack([p.rots for p in poses]),
        )

    @property
    def num_frames(self) -> int:
        return len(self.rots)

    @property
    def num_joints(self) -> int:
        return self.rots.shape[1]

    @property
    def duration(self) -> float:
        """Seconds between the first and last frame."""
        return (self.num_frames - 1) / self.fps

    def frame(self, index: int) -> Pose:
        return Pose(self.root_t[index], self.rots[index])

    def __len__(self) -> int:
        return self.num_frames

    def __iter__(self) -> Iterator[Pose]:
        for k in range(self.num_frames):
            yield self.frame(k)


@dataclass(frozen=True, eq=False)
class KeypointSequence:
    """World-space joint positions, (F, J, 3), at a fixed rate."""

    fps: float
    positions: np.ndarray

    def __post_init__(self):
        positions = np.array(self.positions, dtype=np.float64)
        if positions.ndim != 3 or positions.shape[2] != 3 or len(positions) < 1:
            raise DimensionMismatchError("keypoint frames", "(F ≥ 1, J, 3)", positions.shape)
        if not self.fps > 0:
            raise InvariantViolationError("fps", "must be positive")
        positions.setflags(write=False)
        object.__setattr__(self, "positions", positions)

    @property
    def num_frames(self) -> int:
        return len(self.positions)

    @property
    def num_joints(self) -> int:
        return self.positions.shape[1]


# ============================================================================
# FILES
# ============================================================================

def _parse(document: Union[str, bytes, Mapping[str, Any]], source: str) -> Any:
    if isinstance(document, (str, bytes)):
        try:
            return json.loads(document)
        except json.JSONDecodeError as e:
            raise DocumentFormatError(source, f"invalid JSON ({e.msg}, line {e.lineno})") from e
    return document


def load_pose_sequence(
    document: Union[str, bytes, Mapping[str, Any]],
    source: str = "pose"
) -> PoseSequence:
    """
    Load and validate a pose file.

    Args:
        document: JSON text or parsed mapping
        source: Name used in error messages

    Returns:
        PoseSequence with unit rotations

    Raises:
        DocumentFormatError: malformed document
        InvariantViolationError: inconsistent joint count (names the frame) or
            a quaternion too far from unit length
    """
    data = _parse(document, source)
    try:
        model = PoseSequenceModel.model_validate(data)
    except ValidationError as e:
        raise from_validation_error(e, source) from e

    joints = len(model.frames[0].rots)
    for k, frame in enumerate(model.frames):
        if len(frame.rots) != joints:
            raise InvariantViolationError(
                f"frames.{k}.rots",
                f"frame {k} has {len(frame.rots)} rotations, expected {joints}",
                source,
            )

    rots = normalize_quaternions(
        [frame.rots for frame in model.frames],
        field_path="frames.{}.rots.{}",
        source=source,
    )
    sequence = PoseSequence(
        fps=model.fps,
        skeleton_ref=model.skeleton_ref,
        root_t=[frame.root_t for frame in model.frames],
        rots=rots,
    )
    logger.debug(f"Loaded {source}: {sequence.num_frames} frames @ {sequence.fps:g} fps")
    return sequence


def dump_pose_sequence(sequence: PoseSequence) -> str:
    """Pose-file JSON for a sequence; floats are written round-trip exact."""
    return json.dumps({
        "version": 1,
        "fps": sequence.fps,
        "skeleton_ref": sequence.skeleton_ref,
        "frames": [
            {"root_t": sequence.root_t[k].tolist(), "rots": sequence.rots[k].tolist()}
            for k in range(sequence.num_frames)
        ],
    })


def load_keypoint_sequence(
    document: Union[str, bytes, Mapping[str, Any]],
    source: str = "keypoints"
) -> KeypointSequence:
    """Load a keypoint file; every frame must list the same number of joints."""
    data = _parse(document, source)
    try:
        model = KeypointSequenceModel.model_validate(data)
    except ValidationError as e:
        raise from_validation_error(e, source) from e

    joints = len(model.frames[0])
    for k, frame in enumerate(model.frames):
        if len(frame) != joints:
            raise InvariantViolationError(
                f"frames.{k}", f"frame {k} has {len(frame)} keypoints, expected {joints}", source
            )
    return KeypointSequence(fps=model.fps, positions=model.frames)


def dump_keypoint_sequence(keypoints: KeypointSequence) -> str:
    return json.dumps({
        "version": 1,
        "fps": keypoints.fps,
        "frames": keypoints.positions.tolist(),
    })


# ============================================================================
# NORMALISATION
# ============================================================================

def resample(sequence: PoseSequence, policy: NormalizationPolicy) -> PoseSequence:
    """
    Resample to round(target_seconds·target_fps) frames at target_fps.

    Output frame k samples source time k·duration/(N−1), so both endpoints
    are reproduced exactly. Rotations are slerped between the two bracketing
    source frames, root displacement is interpolated linearly.

    Args:
        sequence: Source sequence
        policy: Target length and rate

    Returns:
        New PoseSequence with policy.num_frames frames
    """
    n_out = policy.num_frames
    n_src = sequence.num_frames

    if n_src == 1:
        root_t = np.repeat(sequence.root_t, n_out, axis=0)
        rots = np.repeat(sequence.rots, n_out, axis=0)
    else:
        position = np.arange(n_out) * (n_src - 1) / (n_out - 1)
        lower = np.minimum(np.floor(position).astype(np.int64), n_src - 1)
        upper = np.minimum(lower + 1, n_src - 1)
        fraction = position - lower

        r0, r1 = sequence.root_t[lower], sequence.root_t[upper]
        root_t = r0 + fraction[:, None] * (r1 - r0)
        rots = slerp(sequence.rots[lower], sequence.rots[upper], fraction[:, None])

    logger.debug(
        f"Resampled {n_src} frames @ {sequence.fps:g} fps to {n_out} @ {policy.target_fps:g} fps"
    )
    return PoseSequence(
        fps=policy.target_fps,
        skeleton_ref=sequence.skeleton_ref,
        root_t=root_t,
        rots=rots,
    )


# ============================================================================
# KEYPOINTS <-> ROTATIONS
# ============================================================================

def keypoints_to_pose(
    keypoints: KeypointSequence,
    skeleton: Skeleton,
    skeleton_ref: str = "humanoid24"
) -> PoseSequence:
    """
    Convert keypoint tracks to local joint rotations.

    Each joint with children is rotated by the minimal rotation that carries
    its canonical bone (towards its first child) onto the observed bone,
    expressed in the parent's frame. Twist about the bone is zero; leaf
    joints get the identity. root_t is the root keypoint's displacement from
    its canonical position.

    Args:
        keypoints: Tracks in skeleton joint order
        skeleton: Target skeleton
        skeleton_ref: Id written into the sequence

    Returns:
        PoseSequence at the keypoints' frame rate

    Raises:
        DimensionMismatchError: keypoint and skeleton joint counts differ
        DegenerateBoneError: an observed bone is shorter than 1e-6 m; names
            the bone's parent and child joints and the frame
    """
    if keypoints.num_joints != skeleton.num_joints:
        raise DimensionMismatchError("keypoint joints", skeleton.num_joints, keypoints.num_joints)

    positions = keypoints.positions
    n_frames, n_joints = positions.shape[:2]
    offsets = skeleton.offsets

    local = np.zeros((n_frames, n_joints, 4))
    local[..., 0] = 1.0
    world_rot = np.empty((n_frames, n_joints, 3, 3))

    for j, joint in enumerate(skeleton.joints):
        parent_rot = (
            np.broadcast_to(np.eye(3), (n_frames, 3, 3)) if joint.parent is None
            else world_rot[:, joint.parent]
        )
        child = skeleton.primary_child(j)
        if child is not None:
            observed = positions[:, child] - positions[:, j]
            lengths = np.linalg.norm(observed, axis=1)
            short = np.flatnonzero(lengths < MIN_BONE_LENGTH)
            if short.size:
                raise DegenerateBoneError(skeleton.joints[child].name, int(short[0]), joint.name)
            in_parent = np.einsum("fba,fb->fa", parent_rot, observed)
            local[:, j] = minimal_rotation(offsets[child], in_parent)
        world_rot[:, j] = parent_rot @ quat_to_matrix(local[:, j])

    root_t = positions[:, 0] - offsets[0]
    logger.debug(f"Converted {n_frames} keypoint frames to joint rotations")
    return PoseSequence(fps=keypoints.fps, skeleton_ref=skeleton_ref, root_t=root_t, rots=local)


def keypoints_from_pose(sequence: PoseSequence, skeleton: Skeleton) -> KeypointSequence:
    """World joint positions of every frame (forward kinematics)."""
    positions = np.stack([
        joint_positions(forward_kinematics(skeleton, pose)) for pose in sequence
    ])
    return KeypointSequence(fps=sequence.fps, positions=positions)

