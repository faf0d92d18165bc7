"""
Scripted Motion Library
=======================

Procedural reference motions for the toy action classes and the
identity-capture motion used to build fit targets. Every motion is a pure
function of (class, seed, length, rate): per-video variation in tempo,
amplitude, phase, facing and side is drawn from a seeded generator.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

from avatar_model import Skeleton
from errors import ConfigurationError, InvariantViolationError
from pose_sequence import PoseSequence
from utils_quaternion import axis_angle, quat_multiply

logger = logging.getLogger(__name__)

SKELETON_REF = "humanoid24"

X_AXIS = (1.0, 0.0, 0.0)
Y_AXIS = (0.0, 1.0, 0.0)
Z_AXIS = (0.0, 0.0, 1.0)

CAPTURE_JOINTS = ("pelvis", "left_shoulder", "right_shoulder")


@dataclass(frozen=True)
class MotionVariation:
    """Per-video perturbation of a scripted motion."""

    tempo: float = 1.0
    amplitude: float = 1.0
    phase: float = 0.0
    facing_deg: float = 0.0
    side: str = "left"

    @classmethod
    def draw(cls, rng: np.random.Generator) -> "MotionVariation":
        return cls(
            tempo=float(rng.uniform(0.8, 1.25)),
            amplitude=float(rng.uniform(0.8, 1.15)),
            phase=float(rng.uniform(0.0, 2.0 * np.pi)),
            facing_deg=float(rng.uniform(-25.0, 25.0)),
            side="left" if rng.integers(2) == 0 else "right",
        )


class _Track:
    """Mutable (F, J) rotation track being scripted."""

    def __init__(self, skeleton: Skeleton, times: np.ndarray):
        self.skeleton = skeleton
        self.times = times
        self.rots = np.zeros((len(times), skeleton.num_joints, 4))
        self.rots[..., 0] = 1.0
        self.root_t = np.zeros((len(times), 3))

    def rotate(self, joint: str, axis, degrees: np.ndarray) -> None:
        """Post-multiply a joint's local rotation by a rotation about `axis`."""
        j = self.skeleton.index_of(joint)
        angles = np.deg2rad(np.broadcast_to(degrees, self.times.shape))
        self.rots[:, j] = quat_multiply(self.rots[:, j], axis_angle(axis, angles))

    def bone_length(self, joint: str) -> float:
        return float(np.linalg.norm(self.skeleton.offsets[self.skeleton.index_of(joint)]))


def _mirror(side: str) -> float:
    return 1.0 if side == "left" else -1.0


def _other(side: str) -> str:
    return "right" if side == "left" else "left"


def _raise_arm_sideways(track: _Track, side: str, degrees) -> None:
    track.rotate(f"{side}_shoulder", Z_AXIS, _mirror(side) * np.asarray(degrees))


def _raise_arm_forward(track: _Track, side: str, degrees) -> None:
    track.rotate(f"{side}_shoulder", X_AXIS, -np.asarray(degrees))


def _flex_leg(track: _Track, side: str, hip_deg, knee_deg) -> None:
    track.rotate(f"{side}_hip", X_AXIS, -np.asarray(hip_deg))
    track.rotate(f"{side}_knee", X_AXIS, np.asarray(knee_deg))


def _leg_drop(track: _Track, side: str, hip_deg, knee_deg) -> np.ndarray:
    """Height lost by a leg flexed at the hip and knee."""
    thigh = track.bone_length(f"{side}_knee")
    shin = track.bone_length(f"{side}_ankle")
    hip = np.deg2rad(hip_deg)
    shin_angle = np.deg2rad(np.asarray(knee_deg) - np.asarray(hip_deg))
    return thigh * (1.0 - np.cos(hip)) + shin * (1.0 - np.cos(shin_angle))


# ============================================================================
# ACTION CLASSES
# ============================================================================

def _wave(track: _Track, cycle: np.ndarray, v: MotionVariation) -> None:
    _raise_arm_sideways(track, v.side, 135.0 * v.amplitude)
    track.rotate(f"{v.side}_elbow", Z_AXIS, _mirror(v.side) * 35.0 * v.amplitude * np.sin(cycle))


def _clap(track: _Track, cycle: np.ndarray, v: MotionVariation) -> None:
    spread = -19.0 + 25.0 * v.amplitude * (1.0 + np.sin(cycle))
    for side in ("left", "right"):
        track.rotate(f"{side}_shoulder", Y_AXIS, _mirror(side) * spread)
        _raise_arm_forward(track, side, 80.0)
        track.rotate(f"{side}_elbow", X_AXIS, -20.0)


def _squat(track: _Track, cycle: np.ndarray, v: MotionVariation) -> None:
    depth = 50.0 * v.amplitude * 0.5 * (1.0 - np.cos(cycle))
    for side in ("left", "right"):
        _flex_leg(track, side, depth, 2.0 * depth)
        _raise_arm_forward(track, side, 1.6 * depth)
    track.rotate("spine1", X_AXIS, 0.5 * depth)
    track.root_t[:, 1] -= _leg_drop(track, "left", depth, 2.0 * depth)


def _jump(track: _Track, cycle: np.ndarray, v: MotionVariation) -> None:
    s = np.sin(cycle)
    crouch = 30.0 * np.clip(-s, 0.0, None)
    for side in ("left", "right"):
        _flex_leg(track, side, crouch, 2.0 * crouch)
        _raise_arm_sideways(track, side, 20.0 + 60.0 * np.clip(s, 0.0, None))
    track.root_t[:, 1] += 0.22 * v.amplitude * np.clip(s, 0.0, None)
    track.root_t[:, 1] -= _leg_drop(track, "left", crouch, 2.0 * crouch)


def _kick(track: _Track, cycle: np.ndarray, v: MotionVariation) -> None:
    swing = 70.0 * v.amplitude * np.clip(np.sin(cycle), 0.0, None)
    knee = 60.0 * np.clip(np.sin(cycle + 0.8), 0.0, None) * (swing < 45.0)
    _flex_leg(track, v.side, swing, knee)
    _raise_arm_sideways(track, _other(v.side), 30.0)
    _raise_arm_sideways(track, v.side, 15.0)


def _bow(track: _Track, cycle: np.ndarray, v: MotionVariation) -> None:
    lean = 50.0 * v.amplitude * 0.5 * (1.0 - np.cos(cycle))
    track.rotate("spine1", X_AXIS, 0.6 * lean)
    track.rotate("spine2", X_AXIS, 0.4 * lean)
    track.rotate("neck", X_AXIS, 0.3 * lean)


def _raise_arms(track: _Track, cycle: np.ndarray, v: MotionVariation) -> None:
    lift = 165.0 * v.amplitude * 0.5 * (1.0 - np.cos(cycle))
    for side in ("left", "right"):
        _raise_arm_sideways(track, side, np.minimum(lift, 175.0))


def _walk(track: _Track, cycle: np.ndarray, v: MotionVariation) -> None:
    s = np.sin(cycle)
    for side, sign in (("left", 1.0), ("right", -1.0)):
        hip = 25.0 * v.amplitude * sign * s
        knee = 35.0 * np.clip(-sign * np.cos(cycle), 0.0, None)
        _flex_leg(track, side, hip, knee)
        _raise_arm_forward(track, side, -20.0 * v.amplitude * sign * s)
    stride = 0.3 * v.amplitude * track.times
    yaw = np.deg2rad(v.facing_deg)
    track.root_t[:, 0] += stride * np.sin(yaw)
    track.root_t[:, 2] += stride * np.cos(yaw)
    track.root_t[:, 1] += 0.015 * np.abs(s)


# name -> (script, base frequency in Hz)
ACTION_SCRIPTS: Dict[str, Tuple[Callable[[_Track, np.ndarray, MotionVariation], None], float]] = {
    "wave": (_wave, 1.5),
    "clap": (_clap, 1.5),
    "squat": (_squat, 0.6),
    "jump": (_jump, 0.8),
    "kick": (_kick, 0.6),
    "bow": (_bow, 0.5),
    "raise_arms": (_raise_arms, 0.6),
    "walk": (_walk, 1.0),
}

TOY_CLASSES = tuple(ACTION_SCRIPTS)


def scripted_motion(
    class_label: str,
    skeleton: Skeleton,
    seed: int,
    seconds: float = 2.0,
    fps: float = 8.0,
    variation: bool = True,
) -> PoseSequence:
    """
    Reference motion of one toy action class.

    Args:
        class_label: One of TOY_CLASSES
        skeleton: Humanoid skeleton (joint names are looked up)
        seed: Per-video variation seed
        seconds: Clip length
        fps: Frame rate
        variation: Draw tempo/amplitude/phase/facing/side from the seed;
            False gives the canonical motion

    Returns:
        PoseSequence of round(seconds·fps) frames

    Raises:
        ConfigurationError: unknown class
    """
    if class_label not in ACTION_SCRIPTS:
        raise ConfigurationError(
            "class_label", f"no scripted motion for '{class_label}' (known: {', '.join(TOY_CLASSES)})"
        )
    script, frequency = ACTION_SCRIPTS[class_label]
    v = MotionVariation.draw(np.random.default_rng(seed)) if variation else MotionVariation()

    n_frames = max(int(seconds * fps + 0.5), 2)
    times = np.arange(n_frames) / fps
    track = _Track(skeleton, times)
    cycle = 2.0 * np.pi * frequency * v.tempo * times + v.phase

    track.rotate("pelvis", Y_AXIS, v.facing_deg)
    script(track, cycle, v)

    logger.debug(f"Scripted '{class_label}' seed {seed}: {n_frames} frames @ {fps:g} fps")
    return PoseSequence(fps=fps, skeleton_ref=SKELETON_REF, root_t=track.root_t, rots=track.rots)


def identity_capture_motion(
    skeleton: Skeleton,
    seconds: float = 18.0,
    fps: float = 18.0,
    turns: int = 3,
) -> PoseSequence:
    """
    Slow full-body turns in place for capturing an identity.

    The subject makes `turns` full turns about the vertical axis with the
    hands raised during one half of each turn and lowered during the other.
    """
    missing = [name for name in CAPTURE_JOINTS if name not in skeleton.names]
    if missing:
        raise InvariantViolationError("skeleton", f"capture motion needs joints {missing}")
    n_frames = max(int(seconds * fps + 0.5), 2)
    times = np.arange(n_frames) / fps
    progress = times / max(times[-1], 1e-12)
    track = _Track(skeleton, times)

    track.rotate("pelvis", Y_AXIS, 360.0 * turns * progress)
    lift = 150.0 * 0.5 * (1.0 - np.cos(2.0 * np.pi * turns * progress))
    for side in ("left", "right"):
        _raise_arm_sideways(track, side, lift)

    return PoseSequence(fps=fps, skeleton_ref=SKELETON_REF, root_t=track.root_t, rots=track.rots)
