"""
Controllable Gaussian Avatar
============================

A skeleton, canonical 3D Gaussian splats bound to it with skinning weights,
and the kinematics that pose them:

1. Avatar file loading and validation
2. Forward kinematics (joint hierarchy to world transforms)
3. Linear blend skinning of splat means, dominant-joint splat rotation
4. A fixed 24-joint humanoid and procedural identities built on it
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from errors import (
    DimensionMismatchError,
    DocumentFormatError,
    InvariantViolationError,
    from_validation_error,
)
from pydantic_models import AvatarModel
from utils_quaternion import (
    IDENTITY_WXYZ,
    matrix_to_quat,
    minimal_rotation,
    normalize_quaternions,
    quat_multiply,
    quat_to_matrix,
)

logger = logging.getLogger(__name__)

MAX_WEIGHTS = 4


def _frozen(array: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.array(array, dtype=dtype)
    out.setflags(write=False)
    return out


# ============================================================================
# DOMAIN TYPES
# ============================================================================

@dataclass(frozen=True)
class Joint:
    """One joint: name, parent index (None for the root), canonical offset in meters."""

    name: str
    parent: Optional[int]
    offset: Tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Joint hierarchy in topological order (parents precede children)."""

    joints: Tuple[Joint, ...]

    def __post_init__(self):
        if len(self.joints) < 2:
            raise InvariantViolationError("skeleton.joints", "at least 2 joints required")
        roots = [i for i, joint in enumerate(self.joints) if joint.parent is None]
        if roots != [0]:
            raise InvariantViolationError(
                "skeleton.joints", "exactly one root, listed first, is required"
            )
        for index, joint in enumerate(self.joints):
            if joint.parent is not None and not 0 <= joint.parent < index:
                raise InvariantViolationError(
                    f"skeleton.joints.{index}.parent", "parent must precede child"
                )
        if len({joint.name for joint in self.joints}) != len(self.joints):
            raise InvariantViolationError("skeleton.joints", "joint names must be unique")

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    @property
    def names(self) -> List[str]:
        return [joint.name for joint in self.joints]

    @cached_property
    def offsets(self) -> np.ndarray:
        return _frozen([joint.offset for joint in self.joints])

    @cached_property
    def children(self) -> Tuple[Tuple[int, ...], ...]:
        kids: List[List[int]] = [[] for _ in self.joints]
        for index, joint in enumerate(self.joints):
            if joint.parent is not None:
                kids[joint.parent].append(index)
        return tuple(tuple(k) for k in kids)

    def primary_child(self, index: int) -> Optional[int]:
        """First child in joint order; it defines the joint's bone direction."""
        kids = self.children[index]
        return kids[0] if kids else None

    def index_of(self, name: str) -> int:
        for index, joint in enumerate(self.joints):
            if joint.name == name:
                return index
        raise KeyError(name)

    @cached_property
    def rest_transforms(self) -> np.ndarray:
        """World transforms of the rest pose (pure translations)."""
        return _frozen(forward_kinematics(self, rest_pose(self)))

    @property
    def rest_positions(self) -> np.ndarray:
        return self.rest_transforms[:, :3, 3]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "joints": [
                {"name": j.name, "parent": j.parent, "offset": list(j.offset)}
                for j in self.joints
            ]
        }


@dataclass(frozen=True, eq=False)
class Avatar:
    """
    Skinned Gaussian-splat avatar.

    Splats are stored as parallel arrays; weights are padded to four
    (joint, weight) pairs with zero weight on joint 0.
    """

    id: str
    skeleton: Skeleton
    means: np.ndarray
    scales: np.ndarray
    rots: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray
    weight_joints: np.ndarray
    weight_values: np.ndarray

    def __post_init__(self):
        n = len(self.means)
        if n < 1:
            raise InvariantViolationError("splats", "at least one splat required")
        for name, width in (("means", 3), ("scales", 3), ("rots", 4), ("colors", 3),
                            ("weight_joints", MAX_WEIGHTS), ("weight_values", MAX_WEIGHTS)):
            value = getattr(self, name)
            if np.shape(value) != (n, width):
                raise DimensionMismatchError(f"splat {name}", (n, width), np.shape(value))
        if np.shape(self.opacities) != (n,):
            raise DimensionMismatchError("splat opacities", (n,), np.shape(self.opacities))

        for name in ("means", "scales", "rots", "colors", "opacities", "weight_values"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "weight_joints", _frozen(self.weight_joints, np.int64))

        if np.any(self.weight_joints < 0) or np.any(self.weight_joints >= self.skeleton.num_joints):
            bad = int(np.argwhere(
                (self.weight_joints < 0) | (self.weight_joints >= self.skeleton.num_joints)
            )[0][0])
            raise InvariantViolationError(f"splats.{bad}.weights", "joint index out of range")

    @property
    def num_splats(self) -> int:
        return len(self.means)

    def with_appearance(
        self,
        colors: Optional[np.ndarray] = None,
        opacities: Optional[np.ndarray] = None
    ) -> "Avatar":
        """Copy with new colors and/or opacities; geometry and weights untouched."""
        return replace(
            self,
            colors=self.colors if colors is None else colors,
            opacities=self.opacities if opacities is None else opacities,
        )


@dataclass(frozen=True, eq=False)
class Pose:
    """One frame of motion: root displacement and per-joint local rotations."""

    root_t: np.ndarray
    rots: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "root_t", _frozen(self.root_t))
        object.__setattr__(self, "rots", _frozen(self.rots))
        if self.root_t.shape != (3,):
            raise DimensionMismatchError("root_t", (3,), self.root_t.shape)
        if self.rots.ndim != 2 or self.rots.shape[1] != 4:
            raise DimensionMismatchError("pose rotations", "(J, 4)", self.rots.shape)
        deviation = np.abs(np.linalg.norm(self.rots, axis=1) - 1.0)
        if np.any(deviation > 1e-6):
            raise InvariantViolationError(
                f"rots.{int(np.argmax(deviation))}", "not a unit quaternion"
            )

    @property
    def num_joints(self) -> int:
        return len(self.rots)


@dataclass(frozen=True, eq=False)
class PosedSplats:
    """World-space splats for one pose; scale, color and opacity copied from canon."""

    means: np.ndarray
    rots: np.ndarray
    scales: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray

    def __len__(self) -> int:
        return len(self.means)

    def select(self, indices) -> "PosedSplats":
        """Subset of splats, in the order given."""
        indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        return PosedSplats(
            means=self.means[indices],
            rots=self.rots[indices],
            scales=self.scales[indices],
            colors=self.colors[indices],
            opacities=self.opacities[indices],
        )


def rest_pose(skeleton: Skeleton) -> Pose:
    """Identity rotations and zero root displacement."""
    return Pose(np.zeros(3), np.tile(IDENTITY_WXYZ, (skeleton.num_joints, 1)))


# ============================================================================
# AVATAR FILES
# ============================================================================

def _parse_document(document: Union[str, bytes, Mapping[str, Any]], source: str) -> Any:
    if isinstance(document, (str, bytes)):
        try:
            return json.loads(document)
        except json.JSONDecodeError as e:
            raise DocumentFormatError(source, f"invalid JSON ({e.msg}, line {e.lineno})") from e
    return document


def build_avatar_from_spec(
    spec_document: Union[str, bytes, Mapping[str, Any]],
    source: str = "avatar"
) -> Avatar:
    """
    Load and validate an avatar document.

    Args:
        spec_document: JSON text or already-parsed mapping
        source: Name used in error messages (usually the file path)

    Returns:
        Validated Avatar with unit rotations and weights summing to 1

    Raises:
        DocumentFormatError: malformed document or unknown fields
        InvariantViolationError: a value breaks an invariant (with field path)
    """
    data = _parse_document(spec_document, source)
    try:
        model = AvatarModel.model_validate(data)
    except ValidationError as e:
        raise from_validation_error(e, source) from e

    skeleton = Skeleton(tuple(
        Joint(j.name, j.parent, tuple(float(c) for c in j.offset))
        for j in model.skeleton.joints
    ))

    n = len(model.splats)
    weight_joints = np.zeros((n, MAX_WEIGHTS), dtype=np.int64)
    weight_values = np.zeros((n, MAX_WEIGHTS))
    for i, splat in enumerate(model.splats):
        for k, (joint, weight) in enumerate(splat.weights):
            if not 0 <= joint < skeleton.num_joints:
                raise InvariantViolationError(
                    f"splats.{i}.weights.{k}",
                    f"joint index {joint} out of range for {skeleton.num_joints} joints",
                    source,
                )
            weight_joints[i, k] = joint
            weight_values[i, k] = weight
    totals = weight_values.sum(axis=1, keepdims=True)
    weight_values = weight_values / totals

    rots = normalize_quaternions(
        [s.rot for s in model.splats], field_path="splats.{}.rot", source=source
    )

    avatar = Avatar(
        id=model.id,
        skeleton=skeleton,
        means=[s.mu for s in model.splats],
        scales=[s.scale for s in model.splats],
        rots=rots,
        colors=[s.color for s in model.splats],
        opacities=[s.opacity for s in model.splats],
        weight_joints=weight_joints,
        weight_values=weight_values,
    )
    logger.debug(f"Loaded avatar '{avatar.id}': {skeleton.num_joints} joints, {n} splats")
    return avatar


def avatar_to_dict(avatar: Avatar) -> Dict[str, Any]:
    """Avatar file structure for an Avatar."""
    splats = []
    for i in range(avatar.num_splats):
        live = avatar.weight_values[i] > 0
        splats.append({
            "mu": avatar.means[i].tolist(),
            "scale": avatar.scales[i].tolist(),
            "rot": avatar.rots[i].tolist(),
            "color": avatar.colors[i].tolist(),
            "opacity": float(avatar.opacities[i]),
            "weights": [
                [int(j), float(w)]
                for j, w in zip(avatar.weight_joints[i][live], avatar.weight_values[i][live])
            ],
        })
    return {
        "version": 1,
        "id": avatar.id,
        "skeleton": avatar.skeleton.to_dict(),
        "splats": splats,
    }


def dump_avatar(avatar: Avatar) -> str:
    """Serialize an Avatar to avatar-file JSON."""
    return json.dumps(avatar_to_dict(avatar))


# ============================================================================
# KINEMATICS
# ============================================================================

def _check_pose(skeleton: Skeleton, pose: Pose) -> None:
    if pose.num_joints != skeleton.num_joints:
        raise DimensionMismatchError("pose rotations", skeleton.num_joints, pose.num_joints)


def forward_kinematics(skeleton: Skeleton, pose: Pose) -> np.ndarray:
    """
    World transforms of every joint.

    transform[j] = transform[parent(j)] ∘ translate(offset_j) ∘ rotate(rots_j);
    the root is additionally translated by root_t.

    Args:
        skeleton: Joint hierarchy
        pose: Matching pose

    Returns:
        (J, 4, 4) array of rigid transforms

    Raises:
        DimensionMismatchError: pose and skeleton disagree on J
    """
    _check_pose(skeleton, pose)
    local_rot = quat_to_matrix(pose.rots)
    offsets = skeleton.offsets

    world = np.empty((skeleton.num_joints, 4, 4))
    for j, joint in enumerate(skeleton.joints):
        local = np.eye(4)
        local[:3, :3] = local_rot[j]
        if joint.parent is None:
            local[:3, 3] = pose.root_t + offsets[j]
            world[j] = local
        else:
            local[:3, 3] = offsets[j]
            world[j] = world[joint.parent] @ local
    return world


def joint_positions(transforms: np.ndarray) -> np.ndarray:
    """Translation parts of (J, 4, 4) transforms."""
    return np.asarray(transforms)[:, :3, 3].copy()


def skinning_matrices(skeleton: Skeleton, pose: Pose) -> np.ndarray:
    """M_k = world(joint_k) ∘ inverse(rest_world(joint_k)) for every joint."""
    world = forward_kinematics(skeleton, pose)
    rest_t = skeleton.rest_positions
    skin = world.copy()
    skin[:, :3, 3] = world[:, :3, 3] - np.einsum("jab,jb->ja", world[:, :3, :3], rest_t)
    return skin


def skin_avatar(avatar: Avatar, pose: Pose) -> PosedSplats:
    """
    Pose an avatar's splats by linear blend skinning.

    Posed means blend the weighted joint transforms; posed rotations use the
    highest-weight joint only.

    Args:
        avatar: Canonical avatar
        pose: Pose matching avatar.skeleton

    Returns:
        PosedSplats in world space

    Raises:
        DimensionMismatchError: pose/skeleton mismatch
    """
    skin = skinning_matrices(avatar.skeleton, pose)

    rot_k = skin[avatar.weight_joints, :3, :3]             # (N, 4, 3, 3)
    trans_k = skin[avatar.weight_joints, :3, 3]            # (N, 4, 3)
    moved = np.einsum("nkab,nb->nka", rot_k, avatar.means) + trans_k
    means = np.einsum("nk,nka->na", avatar.weight_values, moved)

    dominant = avatar.weight_joints[
        np.arange(avatar.num_splats), np.argmax(avatar.weight_values, axis=1)
    ]
    joint_quats = matrix_to_quat(skin[:, :3, :3])
    rots = quat_multiply(joint_quats[dominant], avatar.rots)
    rots = rots / np.linalg.norm(rots, axis=1, keepdims=True)

    return PosedSplats(
        means=means,
        rots=rots,
        scales=avatar.scales,
        colors=avatar.colors,
        opacities=avatar.opacities,
    )


# ============================================================================
# HUMANOID
# ============================================================================

# (name, parent, offset from parent) at height_scale 1; y up, subject faces +z,
# arms hanging, +x on the subject's left.
HUMANOID_JOINTS: Tuple[Tuple[str, Optional[str], Tuple[float, float, float]], ...] = (
    ("pelvis", None, (0.0, 0.95, 0.0)),
    ("spine1", "pelvis", (0.0, 0.10, 0.0)),
    ("spine2", "spine1", (0.0, 0.12, 0.0)),
    ("spine3", "spine2", (0.0, 0.12, 0.0)),
    ("neck", "spine3", (0.0, 0.14, 0.0)),
    ("head", "neck", (0.0, 0.10, 0.0)),
    ("left_clavicle", "spine3", (0.07, 0.10, 0.0)),
    ("left_shoulder", "left_clavicle", (0.11, -0.02, 0.0)),
    ("left_elbow", "left_shoulder", (0.0, -0.28, 0.0)),
    ("left_wrist", "left_elbow", (0.0, -0.25, 0.0)),
    ("left_hand", "left_wrist", (0.0, -0.08, 0.0)),
    ("right_clavicle", "spine3", (-0.07, 0.10, 0.0)),
    ("right_shoulder", "right_clavicle", (-0.11, -0.02, 0.0)),
    ("right_elbow", "right_shoulder", (0.0, -0.28, 0.0)),
    ("right_wrist", "right_elbow", (0.0, -0.25, 0.0)),
    ("right_hand", "right_wrist", (0.0, -0.08, 0.0)),
    ("left_hip", "pelvis", (0.09, -0.05, 0.0)),
    ("left_knee", "left_hip", (0.0, -0.42, 0.0)),
    ("left_ankle", "left_knee", (0.0, -0.40, 0.0)),
    ("left_foot", "left_ankle", (0.0, -0.05, 0.12)),
    ("right_hip", "pelvis", (-0.09, -0.05, 0.0)),
    ("right_knee", "right_hip", (0.0, -0.42, 0.0)),
    ("right_ankle", "right_knee", (0.0, -0.40, 0.0)),
    ("right_foot", "right_ankle", (0.0, -0.05, 0.12)),
)

SKIN_TONES = (
    (0.96, 0.80, 0.69), (0.89, 0.68, 0.53), (0.78, 0.57, 0.42),
    (0.62, 0.44, 0.31), (0.45, 0.31, 0.22), (0.33, 0.22, 0.15),
)

# Bone region by the joint the bone ends at: (appearance slot, radius in meters)
_BONE_STYLE: Dict[str, Tuple[str, float]] = {
    "spine1": ("top", 0.075), "spine2": ("top", 0.08), "spine3": ("top", 0.08),
    "neck": ("skin", 0.045), "head": ("skin", 0.05),
    "clavicle": ("top", 0.045), "shoulder": ("top", 0.045), "elbow": ("top", 0.04),
    "wrist": ("skin", 0.032), "hand": ("skin", 0.03),
    "hip": ("bottom", 0.07), "knee": ("bottom", 0.06), "ankle": ("bottom", 0.045),
    "foot": ("shoes", 0.035),
}


def build_humanoid_skeleton(height_scale: float = 1.0, width_scale: float = 1.0) -> Skeleton:
    """The fixed 24-joint humanoid, optionally rescaled."""
    names = [name for name, _, _ in HUMANOID_JOINTS]
    joints = []
    for name, parent, (x, y, z) in HUMANOID_JOINTS:
        joints.append(Joint(
            name=name,
            parent=None if parent is None else names.index(parent),
            offset=(x * width_scale * height_scale, y * height_scale, z * height_scale),
        ))
    return Skeleton(tuple(joints))


def _style_for(joint_name: str) -> Tuple[str, float]:
    key = joint_name.split("_", 1)[-1]
    return _BONE_STYLE[key]


def build_humanoid_avatar(
    avatar_id: str,
    seed: int,
    splats_per_bone: int = 6,
    height_scale: Optional[float] = None,
) -> Avatar:
    """
    Procedural identity on the humanoid skeleton.

    Body proportions, skin tone and clothing colours are drawn from a seeded
    generator; splats are laid along every bone, skinned to the joint that
    moves the bone and blended with its parent near the bone's start.

    Args:
        avatar_id: Identity id
        seed: Appearance seed
        splats_per_bone: Splats along each bone
        height_scale: Fixed body scale (drawn from [0.9, 1.1] when None)

    Returns:
        Avatar with a few hundred splats
    """
    rng = np.random.default_rng(seed)
    if height_scale is None:
        height_scale = float(rng.uniform(0.9, 1.1))
    width_scale = float(rng.uniform(0.85, 1.15))
    skeleton = build_humanoid_skeleton(height_scale, width_scale)
    rest = skeleton.rest_positions

    skin = np.clip(np.array(SKIN_TONES[rng.integers(len(SKIN_TONES))]) + rng.normal(0, 0.02, 3), 0, 1)
    palette = {
        "skin": skin,
        "top": rng.uniform(0.05, 0.95, 3),
        "bottom": rng.uniform(0.05, 0.75, 3),
        "shoes": rng.uniform(0.0, 0.3, 3),
        "hair": rng.uniform(0.02, 0.35) * np.array([1.0, 0.8, 0.6]),
    }

    means: List[np.ndarray] = []
    scales: List[Tuple[float, float, float]] = []
    rots: List[np.ndarray] = []
    colors: List[np.ndarray] = []
    weights: List[List[Tuple[int, float]]] = []

    def add(mu, scale, rot, color, joint_weights):
        means.append(np.asarray(mu, dtype=np.float64))
        scales.append(tuple(float(np.clip(s, 1e-5, 10.0)) for s in scale))
        rots.append(np.asarray(rot, dtype=np.float64))
        colors.append(np.clip(color + rng.normal(0, 0.015, 3), 0.0, 1.0))
        weights.append(joint_weights)

    for j, joint in enumerate(skeleton.joints):
        if joint.parent is None:
            continue
        owner = joint.parent
        grand = skeleton.joints[owner].parent
        start, end = rest[owner], rest[j]
        bone = end - start
        length = float(np.linalg.norm(bone))
        slot, radius = _style_for(joint.name)
        radius *= width_scale * height_scale
        rot = minimal_rotation(np.array([0.0, 1.0, 0.0]), bone)
        along = max(radius, 0.6 * length / splats_per_bone)

        lateral = [0.0]
        if joint.name.startswith("spine"):
            lateral = [-0.08 * width_scale, 0.0, 0.08 * width_scale]

        for k in range(splats_per_bone):
            f = (k + 0.5) / splats_per_bone
            blend = 0.5 * (0.25 - f) / 0.25 if (f < 0.25 and grand is not None) else 0.0
            joint_weights = [(owner, 1.0 - blend)] + ([(grand, blend)] if blend > 0 else [])
            for dx in lateral:
                mu = start + f * bone + np.array([dx, 0.0, 0.0])
                add(mu, (radius, along, radius), rot, palette[slot], joint_weights)

    head = skeleton.index_of("head")
    head_pos = rest[head]
    r_head = 0.09 * height_scale
    add(head_pos + np.array([0.0, 0.06, 0.0]) * height_scale, (r_head, r_head * 1.15, r_head),
        IDENTITY_WXYZ, palette["skin"], [(head, 1.0)])
    add(head_pos + np.array([0.0, 0.11, -0.03]) * height_scale, (r_head, r_head * 0.7, r_head),
        IDENTITY_WXYZ, palette["hair"], [(head, 1.0)])
    for side in ("left", "right"):
        hand = skeleton.index_of(f"{side}_hand")
        add(rest[hand], (0.035 * height_scale,) * 3, IDENTITY_WXYZ, palette["skin"], [(hand, 1.0)])

    n = len(means)
    weight_joints = np.zeros((n, MAX_WEIGHTS), dtype=np.int64)
    weight_values = np.zeros((n, MAX_WEIGHTS))
    for i, pairs in enumerate(weights):
        for k, (joint, weight) in enumerate(pairs):
            weight_joints[i, k] = joint
            weight_values[i, k] = weight

    avatar = Avatar(
        id=avatar_id,
        skeleton=skeleton,
        means=np.array(means),
        scales=np.array(scales),
        rots=np.array(rots),
        colors=np.array(colors),
        opacities=rng.uniform(0.85, 0.95, n),
        weight_joints=weight_joints,
        weight_values=weight_values,
    )
    logger.info(f"Built humanoid avatar '{avatar_id}' with {n} splats (seed {seed})")
    return avatar
