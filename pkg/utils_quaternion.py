"""
Quaternion Utilities
====================

Helpers for unit quaternions stored scalar-first as (w, x, y, z), the order
used by every file format in this project. Conversions go through
scipy.spatial.transform.Rotation, which stores (x, y, z, w).
"""

import logging
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from errors import InvariantViolationError

logger = logging.getLogger(__name__)

IDENTITY_WXYZ = np.array([1.0, 0.0, 0.0, 0.0])

# Deviation from unit norm that is renormalised silently; larger is rejected.
RENORMALIZE_TOLERANCE = 1e-3
# Below this deviation a quaternion is left untouched so that a load/save/load
# cycle reproduces identical bits.
EXACT_UNIT_TOLERANCE = 1e-12


# ============================================================================
# CONVERSIONS
# ============================================================================

def to_scipy_order(q_wxyz: np.ndarray) -> np.ndarray:
    """Reorder (..., w, x, y, z) to scipy's (..., x, y, z, w)."""
    q = np.asarray(q_wxyz, dtype=np.float64)
    return np.concatenate([q[..., 1:4], q[..., :1]], axis=-1)


def from_scipy_order(q_xyzw: np.ndarray) -> np.ndarray:
    """Reorder scipy's (..., x, y, z, w) to (..., w, x, y, z)."""
    q = np.asarray(q_xyzw, dtype=np.float64)
    return np.concatenate([q[..., 3:4], q[..., :3]], axis=-1)


def as_rotation(q_wxyz: np.ndarray) -> Rotation:
    """Build a scipy Rotation from one or many (w, x, y, z) quaternions."""
    return Rotation.from_quat(to_scipy_order(q_wxyz))


def quat_to_matrix(q_wxyz: np.ndarray) -> np.ndarray:
    """Rotation matrices for (..., 4) quaternions, shape (..., 3, 3)."""
    q = np.asarray(q_wxyz, dtype=np.float64)
    flat = q.reshape(-1, 4)
    matrices = as_rotation(flat).as_matrix()
    return matrices.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(matrices: np.ndarray) -> np.ndarray:
    """(w, x, y, z) quaternions for (..., 3, 3) rotation matrices."""
    m = np.asarray(matrices, dtype=np.float64)
    flat = m.reshape(-1, 3, 3)
    quats = from_scipy_order(Rotation.from_matrix(flat).as_quat())
    return quats.reshape(m.shape[:-2] + (4,))


def axis_angle(axis, angle) -> np.ndarray:
    """
    Quaternion(s) for rotations of `angle` radians about `axis`.

    Args:
        axis: 3-vector (normalised here)
        angle: scalar or array of angles

    Returns:
        (4,) or (N, 4) array of (w, x, y, z) quaternions
    """
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    angles = np.asarray(angle, dtype=np.float64)
    rotvecs = angles[..., None] * axis
    quats = from_scipy_order(Rotation.from_rotvec(rotvecs.reshape(-1, 3)).as_quat())
    return quats.reshape(angles.shape + (4,))


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b for (..., 4) quaternions (rotation b, then a)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


# ============================================================================
# VALIDATION
# ============================================================================

def normalize_quaternions(
    quats: np.ndarray,
    field_path: str = "rot",
    source: Optional[str] = None
) -> np.ndarray:
    """
    Enforce unit norm on (..., 4) quaternions.

    Quaternions within RENORMALIZE_TOLERANCE of unit length are renormalised
    silently; anything further off is corrupt data.

    Args:
        quats: Array of quaternions
        field_path: Field path used in error messages
        source: Document name used in error messages

    Returns:
        Array of unit quaternions (same shape)

    Raises:
        InvariantViolationError: a quaternion is too far from unit length
    """
    q = np.array(quats, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1)
    deviation = np.abs(norms - 1.0)

    bad = np.argwhere(deviation > RENORMALIZE_TOLERANCE)
    if bad.size:
        index = tuple(int(i) for i in bad[0])
        path = field_path.format(*index) if "{" in field_path else field_path
        raise InvariantViolationError(
            path,
            f"not a unit quaternion (norm {norms[index]:.6g})",
            source
        )

    needs = deviation > EXACT_UNIT_TOLERANCE
    if np.any(needs):
        logger.debug(f"Renormalising {int(needs.sum())} quaternion(s) in {field_path}")
        q[needs] = q[needs] / norms[needs][:, None]
    return q


# ============================================================================
# INTERPOLATION AND ALIGNMENT
# ============================================================================

def slerp(q0: np.ndarray, q1: np.ndarray, fraction) -> np.ndarray:
    """
    Spherical linear interpolation along the shorter arc.

    q1 is negated where dot(q0, q1) < 0. A fraction of exactly 0 returns q0
    and exactly 1 returns the (sign-aligned) q1, bit for bit.

    Args:
        q0: (..., 4) start quaternions
        q1: (..., 4) end quaternions
        fraction: scalar or array broadcastable to q0[..., 0]

    Returns:
        (..., 4) interpolated unit quaternions
    """
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    t = np.asarray(fraction, dtype=np.float64)
    t = np.broadcast_to(t, np.broadcast_shapes(q0.shape[:-1], q1.shape[:-1], t.shape))

    dot = np.sum(q0 * q1, axis=-1)
    q1 = np.where((dot < 0.0)[..., None], -q1, q1)
    dot = np.abs(dot)

    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_theta = np.sin(theta)
    near = sin_theta < 1e-8

    with np.errstate(invalid="ignore", divide="ignore"):
        w0 = np.where(near, 1.0 - t, np.sin((1.0 - t) * theta) / sin_theta)
        w1 = np.where(near, t, np.sin(t * theta) / sin_theta)
    out = w0[..., None] * q0 + w1[..., None] * q1
    out = out / np.linalg.norm(out, axis=-1, keepdims=True)

    out = np.where((t == 0.0)[..., None], q0, out)
    out = np.where((t == 1.0)[..., None], q1, out)
    return out


def minimal_rotation(source_dir: np.ndarray, target_dir: np.ndarray) -> np.ndarray:
    """
    Smallest rotation carrying one direction onto another, as (w, x, y, z).

    Inputs broadcast, so one canonical direction can be aligned with a whole
    track of observed directions at once.

    Args:
        source_dir: (..., 3) non-zero vectors
        target_dir: (..., 3) non-zero vectors

    Returns:
        (..., 4) unit quaternions q with q * source ∥ target. Parallel inputs
        give the identity; antiparallel inputs give a half turn about an axis
        perpendicular to source_dir.
    """
    a = np.asarray(source_dir, dtype=np.float64)
    b = np.asarray(target_dir, dtype=np.float64)
    a, b = np.broadcast_arrays(a, b)
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)

    dot = np.sum(a * b, axis=-1)
    q = np.concatenate([(1.0 + dot)[..., None], np.cross(a, b)], axis=-1)

    anti = dot <= -1.0 + 1e-12
    if np.any(anti):
        helper = np.where(
            (np.abs(a[..., 0]) < 0.9)[..., None],
            np.array([1.0, 0.0, 0.0]),
            np.array([0.0, 1.0, 0.0]),
        )
        axis = np.cross(a, helper)
        axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
        half_turn = np.concatenate([np.zeros(dot.shape + (1,)), axis], axis=-1)
        q = np.where(anti[..., None], half_turn, q)

    with np.errstate(invalid="ignore", divide="ignore"):
        q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    parallel = dot >= 1.0 - 1e-15
    return np.where(parallel[..., None], IDENTITY_WXYZ, q)
