"""
Gaussian Splat Renderer
=======================

Software renderer for posed Gaussian splats:

1. Pinhole camera (x right, y down, z forward; orientation is camera-to-world)
2. Projection of 3D Gaussians to screen-space ellipses
3. Front-to-back alpha blending over a uniform background
4. Video sequences rendered frame by frame, written as RGBA PNG directories

Pixel centres sit at integer coordinates.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from avatar_model import Avatar, Pose, PosedSplats, skin_avatar
from errors import DocumentFormatError, InvariantViolationError, from_validation_error
from pydantic_models import CameraModel
from utils_image import read_frame_directory, write_frame_directory
from utils_parallel import ParallelMapper
from utils_quaternion import axis_angle, normalize_quaternions, quat_multiply, quat_to_matrix

logger = logging.getLogger(__name__)

WHITE = (1.0, 1.0, 1.0)
BLACK = (0.0, 0.0, 0.0)

MIN_DEPTH = 0.01
ALPHA_CAP = 0.99
ALPHA_MIN = 1.0 / 255.0
TRANSMITTANCE_MIN = 1e-4
COV_DILATION = 0.3
SIGMA_CUTOFF = 3.0

DEFAULT_RESOLUTION = (128, 128)


# ============================================================================
# CAMERA
# ============================================================================

@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera; focal length and principal point in pixels."""

    position: np.ndarray
    orientation: np.ndarray
    focal: float
    principal: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        if not self.focal > 0:
            raise InvariantViolationError("camera.focal", "must be positive")
        if self.width < 1 or self.height < 1:
            raise InvariantViolationError("camera", "width and height must be at least 1")
        for name in ("position", "principal"):
            value = np.array(getattr(self, name), dtype=np.float64)
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        orientation = normalize_quaternions(self.orientation, "camera.orientation")
        orientation.setflags(write=False)
        object.__setattr__(self, "orientation", orientation)
        object.__setattr__(self, "focal", float(self.focal))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def world_to_camera(self) -> np.ndarray:
        """Rotation W taking world vectors into camera axes."""
        return quat_to_matrix(self.orientation).T

    @classmethod
    def from_model(cls, model: CameraModel) -> "Camera":
        return cls(
            position=model.position,
            orientation=model.orientation,
            focal=model.focal,
            principal=model.principal,
            width=model.width,
            height=model.height,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "position": self.position.tolist(),
            "orientation": self.orientation.tolist(),
            "focal": self.focal,
            "principal": self.principal.tolist(),
            "width": self.width,
            "height": self.height,
        }

    def at_resolution(self, width: int, height: int) -> "Camera":
        """
        Same view at another image size.

        The focal length follows the height ratio; the principal point maps
        through the pixel-edge coordinates so the optical axis stays put.
        """
        sx, sy = width / self.width, height / self.height
        principal = (self.principal + 0.5) * np.array([sx, sy]) - 0.5
        return replace(self, focal=self.focal * sy, principal=principal, width=width, height=height)

    def jittered(
        self,
        rng: np.random.Generator,
        focal_frac: float,
        orientation_deg: float
    ) -> "Camera":
        """Small random change of focal length and viewing direction."""
        focal = self.focal * (1.0 + rng.uniform(-focal_frac, focal_frac))
        axis = rng.normal(size=3)
        angle = np.deg2rad(rng.uniform(-orientation_deg, orientation_deg))
        delta = axis_angle(axis, angle)
        orientation = quat_multiply(self.orientation, delta)
        return replace(self, focal=focal, orientation=orientation / np.linalg.norm(orientation))

    def transformed(self, rotation_wxyz: np.ndarray, translation: np.ndarray) -> "Camera":
        """Camera moved by the world rigid transform x -> R·x + t."""
        rotation = quat_to_matrix(rotation_wxyz)
        return replace(
            self,
            position=rotation @ self.position + np.asarray(translation, dtype=np.float64),
            orientation=quat_multiply(rotation_wxyz, self.orientation),
        )


def default_camera(width: int = DEFAULT_RESOLUTION[0], height: int = DEFAULT_RESOLUTION[1]) -> Camera:
    """Front view of a standing subject: 3.5 m away at hip height, 128 px ≈ 2.4 m."""
    base = Camera(
        position=(0.0, 0.9, 3.5),
        orientation=(0.0, 1.0, 0.0, 0.0),
        focal=187.0,
        principal=(63.5, 63.5),
        width=128,
        height=128,
    )
    return base if (width, height) == (128, 128) else base.at_resolution(width, height)


def load_camera(document: Union[str, bytes, Mapping[str, Any]], source: str = "camera") -> Camera:
    """Load camera.json content."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise DocumentFormatError(source, f"invalid JSON ({e.msg})") from e
    try:
        return Camera.from_model(CameraModel.model_validate(document))
    except ValidationError as e:
        raise from_validation_error(e, source) from e


# ============================================================================
# PROJECTION
# ============================================================================

@dataclass(frozen=True, eq=False)
class Splat2D:
    """Screen-space splat: centre in pixels, 2×2 covariance in pixels², camera depth."""

    center: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float
    index: int = 0

    def __post_init__(self):
        if not self.depth > 0:
            raise InvariantViolationError("splat2d.depth", "must be positive")
        cov = np.asarray(self.cov2d, dtype=np.float64)
        a, b, c, d = cov[0, 0], cov[0, 1], cov[1, 0], cov[1, 1]
        smallest = 0.5 * (a + d) - math.hypot(0.5 * (a - d), b)
        if abs(b - c) > 1e-9 or smallest < 1e-8:
            raise InvariantViolationError("splat2d.cov2d", "not symmetric positive-definite")
        object.__setattr__(self, "cov2d", cov)


def cutoff_sigmas(opacity: float) -> float:
    """Mahalanobis radius beyond which opacity·exp(−½r²) stays below 1/255 (at least 3)."""
    effective = min(float(opacity), ALPHA_CAP)
    if effective * 255.0 <= 1.0:
        return SIGMA_CUTOFF
    return max(SIGMA_CUTOFF, math.sqrt(2.0 * math.log(255.0 * effective)))


def project_splats(posed: PosedSplats, camera: Camera) -> List[Splat2D]:
    """
    Project posed splats; culled splats are omitted.

    Σ3d = R·diag(scale)²·Rᵀ, Σ2d = J·W·Σ3d·Wᵀ·Jᵀ + 0.3·I with W the
    world-to-camera rotation and J the pinhole Jacobian at the splat's
    camera-space position. A splat is culled when its depth is at most
    0.01 m, its opacity is below 1/255, or its cutoff ellipse misses the
    viewport.

    Args:
        posed: World-space splats
        camera: Camera

    Returns:
        Surviving Splat2D objects, index = position in `posed`
    """
    if len(posed) == 0:
        return []
    w2c = camera.world_to_camera
    p_cam = (np.asarray(posed.means) - camera.position) @ w2c.T
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]

    keep = (z > MIN_DEPTH) & (np.asarray(posed.opacities) >= ALPHA_MIN)
    safe_z = np.where(keep, z, 1.0)
    f = camera.focal
    centers = np.stack([f * x / safe_z + camera.principal[0], f * y / safe_z + camera.principal[1]], axis=1)

    rot = quat_to_matrix(posed.rots)
    scaled = rot * np.asarray(posed.scales)[:, None, :]
    cov3d = scaled @ np.swapaxes(scaled, 1, 2)

    jac = np.zeros((len(posed), 2, 3))
    jac[:, 0, 0] = f / safe_z
    jac[:, 0, 2] = -f * x / safe_z**2
    jac[:, 1, 1] = f / safe_z
    jac[:, 1, 2] = -f * y / safe_z**2
    t = jac @ w2c
    cov2d = t @ cov3d @ np.swapaxes(t, 1, 2)
    cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, 1, 2)) + COV_DILATION * np.eye(2)

    splats = []
    for i in np.flatnonzero(keep):
        k = cutoff_sigmas(posed.opacities[i])
        rx, ry = k * math.sqrt(cov2d[i, 0, 0]), k * math.sqrt(cov2d[i, 1, 1])
        cx, cy = centers[i]
        if cx + rx < -0.5 or cx - rx > camera.width - 0.5 or cy + ry < -0.5 or cy - ry > camera.height - 0.5:
            continue
        splats.append(Splat2D(
            center=centers[i],
            cov2d=cov2d[i],
            depth=float(z[i]),
            color=np.asarray(posed.colors[i]),
            opacity=float(posed.opacities[i]),
            index=int(i),
        ))
    return splats


def project_splat(posed: PosedSplats, camera: Camera, index: int = 0) -> Optional[Splat2D]:
    """Project one splat of `posed`; None when culled."""
    projected = project_splats(posed.select([index]), camera)
    if not projected:
        return None
    return replace(projected[0], index=index)


# ============================================================================
# FRAMEBUFFER
# ============================================================================

@dataclass(frozen=True, eq=False)
class Framebuffer:
    """
    Rendered frame.

    `color` is the premultiplied foreground (Σ cᵢ·αᵢ·Tᵢ) and `alpha` its
    coverage 1−T; `background` is the colour the frame was rendered over.
    """

    color: np.ndarray
    alpha: np.ndarray
    background: Tuple[float, float, float] = WHITE

    def __post_init__(self):
        color = np.clip(np.array(self.color, dtype=np.float64), 0.0, 1.0)
        alpha = np.clip(np.array(self.alpha, dtype=np.float64), 0.0, 1.0)
        if color.shape != alpha.shape + (3,):
            raise InvariantViolationError("framebuffer", f"color {color.shape} vs alpha {alpha.shape}")
        color.setflags(write=False)
        alpha.setflags(write=False)
        object.__setattr__(self, "color", color)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "background", tuple(float(c) for c in self.background))

    @classmethod
    def empty(cls, width: int, height: int, background=WHITE) -> "Framebuffer":
        return cls(np.zeros((height, width, 3)), np.zeros((height, width)), background)

    @property
    def height(self) -> int:
        return self.alpha.shape[0]

    @property
    def width(self) -> int:
        return self.alpha.shape[1]

    @property
    def pixels(self) -> np.ndarray:
        """(H, W, 4) premultiplied RGBA."""
        return np.concatenate([self.color, self.alpha[..., None]], axis=-1)

    def over_background(self) -> np.ndarray:
        """(H, W, 3) final image C + background·T."""
        out = self.color + np.asarray(self.background) * (1.0 - self.alpha)[..., None]
        return np.clip(out, 0.0, 1.0)

    def to_rgba(self) -> np.ndarray:
        """PNG payload: final RGB over the background plus coverage alpha."""
        return np.concatenate([self.over_background(), self.alpha[..., None]], axis=-1)

    @classmethod
    def from_rgba(cls, rgba: np.ndarray, background=WHITE) -> "Framebuffer":
        """Inverse of to_rgba (up to quantisation)."""
        rgba = np.asarray(rgba, dtype=np.float64)
        alpha = rgba[..., 3]
        color = rgba[..., :3] - np.asarray(background) * (1.0 - alpha)[..., None]
        color = np.clip(color, 0.0, alpha[..., None])
        return cls(color, alpha, background)


class Contribution(NamedTuple):
    """Blend weights αᵢ·Tᵢ of one splat over its pixel window."""

    index: int
    rows: slice
    cols: slice
    weights: np.ndarray


# ============================================================================
# RASTERIZATION
# ============================================================================

def _inverse_2x2(cov: np.ndarray) -> Tuple[float, float, float]:
    a, b, d = cov[0, 0], cov[0, 1], cov[1, 1]
    det = a * d - b * b
    return d / det, -b / det, a / det


def rasterize(
    splats2d: Sequence[Splat2D],
    camera: Camera,
    background: Sequence[float] = WHITE,
    contributions: Optional[List[Contribution]] = None
) -> Framebuffer:
    """
    Blend splats front to back.

    Splats are sorted by depth (ties keep input order). Per pixel
    αᵢ = min(opacityᵢ·exp(−½ dᵀΣ⁻¹d), 0.99); terms with αᵢ < 1/255 are
    skipped and a pixel stops accumulating once T < 1e-4.

    Args:
        splats2d: Projected splats
        camera: Camera giving the image size
        background: Uniform background colour
        contributions: When given, receives one Contribution per drawn splat

    Returns:
        Framebuffer (foreground layer plus background)
    """
    height, width = camera.height, camera.width
    color = np.zeros((height, width, 3))
    transmittance = np.ones((height, width))

    order = np.argsort(np.array([s.depth for s in splats2d]), kind="stable")
    for position in order:
        splat = splats2d[position]
        k = cutoff_sigmas(splat.opacity)
        cx, cy = float(splat.center[0]), float(splat.center[1])
        rx = k * math.sqrt(splat.cov2d[0, 0]) + 0.5
        ry = k * math.sqrt(splat.cov2d[1, 1]) + 0.5
        x0, x1 = max(0, math.ceil(cx - rx)), min(width - 1, math.floor(cx + rx))
        y0, y1 = max(0, math.ceil(cy - ry)), min(height - 1, math.floor(cy + ry))
        if x0 > x1 or y0 > y1:
            continue

        dx = np.arange(x0, x1 + 1, dtype=np.float64) - cx
        dy = np.arange(y0, y1 + 1, dtype=np.float64) - cy
        ia, ib, id_ = _inverse_2x2(splat.cov2d)
        power = -0.5 * (ia * dx[None, :] ** 2 + 2.0 * ib * dy[:, None] * dx[None, :] + id_ * dy[:, None] ** 2)
        alpha = np.minimum(splat.opacity * np.exp(power), ALPHA_CAP)

        rows, cols = slice(y0, y1 + 1), slice(x0, x1 + 1)
        t_window = transmittance[rows, cols]
        alpha = np.where((alpha >= ALPHA_MIN) & (t_window >= TRANSMITTANCE_MIN), alpha, 0.0)
        weight = alpha * t_window
        color[rows, cols] += weight[..., None] * np.asarray(splat.color)
        transmittance[rows, cols] = t_window * (1.0 - alpha)

        if contributions is not None:
            contributions.append(Contribution(splat.index, rows, cols, weight))

    return Framebuffer(color, 1.0 - transmittance, tuple(background))


def render_pose(
    avatar: Avatar,
    pose: Pose,
    camera: Camera,
    background: Sequence[float] = WHITE,
    contributions: Optional[List[Contribution]] = None
) -> Framebuffer:
    """rasterize(project(skin_avatar(avatar, pose)))."""
    posed = skin_avatar(avatar, pose)
    return rasterize(project_splats(posed, camera), camera, background, contributions)


def render_sequence(
    avatar: Avatar,
    sequence,
    camera: Camera,
    background: Sequence[float] = WHITE,
    max_workers: int = 1
) -> List[Framebuffer]:
    """
    Render one frame per pose over a uniform background.

    Args:
        avatar: Avatar to animate
        sequence: PoseSequence matching avatar.skeleton
        camera: Camera
        background: Background colour (white for pipeline videos)
        max_workers: Frame-level parallelism

    Returns:
        Framebuffers in sequence order
    """
    poses = list(sequence)
    frames = ParallelMapper(max_workers).map(
        lambda pose: render_pose(avatar, pose, camera, background), poses, "frames"
    )
    logger.debug(f"Rendered {len(frames)} frames of '{avatar.id}' at {camera.width}x{camera.height}")
    return frames


# ============================================================================
# VIDEO FILES
# ============================================================================

def write_video(directory: Union[str, Path], frames: Sequence[Framebuffer], fps: float) -> Path:
    """Write framebuffers as RGBA PNGs plus meta.json (with the background colour)."""
    background = list(frames[0].background) if frames else list(WHITE)
    return write_frame_directory(
        directory,
        [frame.to_rgba() for frame in frames],
        fps,
        extra_meta={"background": background},
    )


def read_video(directory: Union[str, Path]) -> Tuple[List[Framebuffer], Dict[str, Any]]:
    """Read a rendered video directory back into framebuffers."""
    meta, images = read_frame_directory(directory, mode="RGBA")
    background = tuple(meta.get("background", WHITE))
    return [Framebuffer.from_rgba(image, background) for image in images], meta
