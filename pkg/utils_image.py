"""
Image and Video Files
=====================

PNG frame I/O with Pillow and the on-disk video layout shared by rendered
and composited videos: `frame_%06d.png` files plus a `meta.json`.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from errors import DocumentFormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FRAME_PATTERN = "frame_{:06d}.png"
META_FILE = "meta.json"


# ============================================================================
# PIXELS
# ============================================================================

def quantize(values: np.ndarray) -> np.ndarray:
    """[0, 1] floats to 8-bit with round-half-up: floor(v·255 + 0.5)."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def dequantize(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) / 255.0


def write_png(path: PathLike, pixels: np.ndarray) -> Path:
    """
    Write an (H, W, 3) or (H, W, 4) float image in [0, 1] as an 8-bit PNG.

    Args:
        path: Output file
        pixels: RGB or RGBA floats

    Returns:
        Path written
    """
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] not in (3, 4):
        raise ValueError(f"expected (H, W, 3|4) pixels, got {pixels.shape}")
    path = Path(path)
    Image.fromarray(quantize(pixels)).save(path, format="PNG")
    return path


def read_png(path: PathLike, mode: str = "RGBA") -> np.ndarray:
    """Read a PNG as (H, W, C) floats in [0, 1], converted to `mode`."""
    path = Path(path)
    try:
        with Image.open(path) as image:
            return dequantize(np.array(image.convert(mode)))
    except (OSError, ValueError) as e:
        raise DocumentFormatError(str(path), f"unreadable image ({e})") from e


# ============================================================================
# VIDEO DIRECTORIES
# ============================================================================

def frame_path(directory: PathLike, index: int) -> Path:
    return Path(directory) / FRAME_PATTERN.format(index)


def list_frames(directory: PathLike) -> List[Path]:
    return sorted(Path(directory).glob("frame_*.png"))


def clear_frames(directory: PathLike) -> int:
    """Remove stale frame files; returns the number removed."""
    stale = list_frames(directory)
    for path in stale:
        path.unlink()
    return len(stale)


def write_meta(directory: PathLike, meta: Dict[str, Any]) -> Path:
    path = Path(directory) / META_FILE
    path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def read_meta(directory: PathLike) -> Dict[str, Any]:
    path = Path(directory) / META_FILE
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise DocumentFormatError(str(path), "missing meta.json") from e
    except json.JSONDecodeError as e:
        raise DocumentFormatError(str(path), f"invalid JSON ({e.msg})") from e


def write_frame_directory(
    directory: PathLike,
    frames: Sequence[np.ndarray],
    fps: float,
    extra_meta: Dict[str, Any] = None
) -> Path:
    """
    Write a video directory, replacing any frames already there.

    Args:
        directory: Video directory (created if needed)
        frames: Float images, all the same size
        fps: Frame rate recorded in meta.json
        extra_meta: Additional meta.json keys

    Returns:
        The directory
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    removed = clear_frames(directory)
    if removed:
        logger.debug(f"Removed {removed} stale frames from {directory}")

    height, width = (frames[0].shape[:2] if frames else (0, 0))
    for k, frame in enumerate(frames):
        write_png(frame_path(directory, k), frame)

    meta = {"fps": fps, "width": int(width), "height": int(height), "num_frames": len(frames)}
    meta.update(extra_meta or {})
    write_meta(directory, meta)
    logger.debug(f"Wrote {len(frames)} frames to {directory}")
    return directory


def read_frame_directory(
    directory: PathLike,
    mode: str = "RGBA"
) -> Tuple[Dict[str, Any], List[np.ndarray]]:
    """Read meta.json and every frame of a video directory."""
    meta = read_meta(directory)
    paths = list_frames(directory)
    expected = meta.get("num_frames")
    if expected is not None and expected != len(paths):
        raise DocumentFormatError(
            str(directory), f"meta.json lists {expected} frames, found {len(paths)}"
        )
    return meta, [read_png(path, mode) for path in paths]
