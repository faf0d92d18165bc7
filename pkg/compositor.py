"""
Background Compositor
=====================

Places white-background renders over background images:

1. Placement: one uniform scale per video from the sequence-wide foreground
   box, feet anchored on a ground line
2. Bilinear resampling of the premultiplied foreground (OpenCV)
3. Source-over blending onto the untouched background
4. Background pools: PNG directories and procedural toy backgrounds
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Union

import cv2
import numpy as np

from errors import EmptyDataError, InvariantViolationError, NoForegroundError
from pydantic_models import PlacementPolicy
from splat_renderer import Framebuffer
from utils_image import read_png, write_frame_directory
from utils_parallel import ParallelMapper

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BackgroundImage:
    """Background raster: (H, W, 3) RGB floats in [0, 1]."""

    id: str
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise InvariantViolationError(f"backgrounds.{self.id}", f"expected (H, W, 3) pixels, got {pixels.shape}")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


class Affine(NamedTuple):
    """Uniform scale plus translation in pixel-edge coordinates: X = scale·x + t."""

    scale: float
    tx: float
    ty: float

    def warp_matrix(self) -> np.ndarray:
        """The same map between pixel-centre indices, as OpenCV expects."""
        shift = 0.5 * self.scale - 0.5
        return np.array([
            [self.scale, 0.0, self.tx + shift],
            [0.0, self.scale, self.ty + shift],
        ])


# ============================================================================
# BACKGROUNDS
# ============================================================================

def load_background(path: Union[str, Path]) -> BackgroundImage:
    """Background from a PNG file; the id is the file stem."""
    path = Path(path)
    return BackgroundImage(path.stem, read_png(path, mode="RGB"))


def make_procedural_background(
    rng: np.random.Generator,
    width: int,
    height: int,
    background_id: str = "procedural"
) -> BackgroundImage:
    """
    Indoor-looking toy background: wall and floor tones split at a horizon,
    a few furniture blocks, mild texture noise.
    """
    wall = rng.uniform(0.35, 0.9, 3)
    floor = rng.uniform(0.15, 0.6, 3)
    horizon = int(height * rng.uniform(0.55, 0.75))

    rows = np.linspace(0.0, 1.0, height)[:, None, None]
    pixels = np.empty((height, width, 3))
    pixels[:] = wall * (1.0 - 0.15 * rows)
    pixels[horizon:] = floor * (0.85 + 0.15 * rows[horizon:])

    for _ in range(int(rng.integers(2, 6))):
        w = int(rng.integers(max(1, width // 10), max(2, width // 3)))
        h = int(rng.integers(max(1, height // 10), max(2, height // 2)))
        x = int(rng.integers(0, max(1, width - w)))
        bottom = int(np.clip(horizon + rng.integers(-height // 20 - 1, height // 10 + 1), h, height))
        pixels[bottom - h:bottom, x:x + w] = rng.uniform(0.05, 0.95, 3)

    pixels += rng.normal(0.0, 0.02, pixels.shape)
    return BackgroundImage(background_id, np.clip(pixels, 0.0, 1.0))


# ============================================================================
# PLACEMENT
# ============================================================================

def foreground_box(frames: Sequence[Framebuffer]) -> Optional[tuple]:
    """Sequence-wide (left, top, right, bottom) pixel-edge box of alpha > 0, or None."""
    covered = np.zeros_like(frames[0].alpha, dtype=bool)
    for frame in frames:
        covered |= frame.alpha > 0
    rows = np.flatnonzero(covered.any(axis=1))
    cols = np.flatnonzero(covered.any(axis=0))
    if rows.size == 0:
        return None
    return float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1)


def plan_placement(
    frames: Sequence[Framebuffer],
    background: BackgroundImage,
    policy: PlacementPolicy
) -> List[Affine]:
    """
    One affine per frame placing the foreground in the background.

    The scale makes the sequence-wide foreground box subject_height_frac of
    the background height. The box's bottom centre lands on
    (horizontal_anchor·width, ground_line·height); the mapping is shared by
    every frame, so root drift inside the render carries over, scaled.

    Args:
        frames: White-background frames of one video
        background: Target background
        policy: Placement policy

    Returns:
        List of Affine, one per frame

    Raises:
        NoForegroundError: every frame is fully transparent
        InvariantViolationError: frames differ in size
    """
    if not frames:
        raise EmptyDataError("frame sequence")
    size = (frames[0].width, frames[0].height)
    for k, frame in enumerate(frames):
        if (frame.width, frame.height) != size:
            raise InvariantViolationError(f"frames.{k}", "frames must share one size")

    box = foreground_box(frames)
    if box is None:
        raise NoForegroundError()
    left, top, right, bottom = box

    scale = policy.subject_height_frac * background.height / (bottom - top)
    tx = policy.horizontal_anchor * background.width - scale * 0.5 * (left + right)
    ty = policy.ground_line * background.height - scale * bottom
    placement = Affine(float(scale), float(tx), float(ty))
    logger.debug(f"Placement on '{background.id}': scale {scale:.4f}, offset ({tx:.2f}, {ty:.2f})")
    return [placement] * len(frames)


# ============================================================================
# COMPOSITING
# ============================================================================

def composite_frame(fg: Framebuffer, background: BackgroundImage, xform: Affine) -> np.ndarray:
    """
    Resample the premultiplied foreground and blend it over the background.

    out = fg_rgb + (1 − fg_a)·bg_rgb, with bilinear resampling of the
    foreground; outside its support the background is returned untouched.

    Returns:
        (H_bg, W_bg, 3) RGB in [0, 1]
    """
    if not xform.scale > 0:
        raise InvariantViolationError("xform.scale", "must be positive")
    warped = cv2.warpAffine(
        fg.pixels,
        xform.warp_matrix(),
        (background.width, background.height),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=(0.0, 0.0, 0.0, 0.0),
    )
    color, alpha = warped[..., :3], np.clip(warped[..., 3:4], 0.0, 1.0)
    return np.clip(color + (1.0 - alpha) * background.pixels, 0.0, 1.0)


def composite_sequence(
    frames: Sequence[Framebuffer],
    background: BackgroundImage,
    policy: PlacementPolicy,
    directory: Optional[Union[str, Path]] = None,
    fps: Optional[float] = None,
    max_workers: int = 1
) -> List[np.ndarray]:
    """
    Plan once, composite every frame, optionally write a video directory.

    Args:
        frames: White-background frames
        background: Background image
        policy: Placement policy
        directory: When given, frames and meta.json are written there
        fps: Frame rate for meta.json
        max_workers: Frame-level parallelism

    Returns:
        Composited RGB frames, same count as the input
    """
    placements = plan_placement(frames, background, policy)
    composited = ParallelMapper(max_workers).map(
        lambda pair: composite_frame(pair[0], background, pair[1]),
        list(zip(frames, placements)),
        "composited frames",
    )
    if directory is not None:
        write_frame_directory(
            directory, composited, fps or 1.0, extra_meta={"background_id": background.id}
        )
    return composited
