"""
Avatar Appearance Fitting
=========================

Fits splat colours and opacities so that renders of an avatar match target
frames of the same identity. Geometry (means, scales, rotations), skinning
weights and the skeleton are never modified.

- Colours: with geometry and opacity fixed, a rendered pixel is linear in
  the splat colours, so the fit is a ridge-regularised least-squares solve.
- Opacities: descent on logit-opacities with central-difference gradients,
  diagonal-curvature scaling and an Armijo backtracking line search.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, sparse

from avatar_model import Avatar, Pose
from errors import EmptyDataError, InvariantViolationError
from pose_sequence import PoseSequence, dump_pose_sequence, load_pose_sequence
from pydantic_models import FitReport
from splat_renderer import (
    WHITE,
    Camera,
    Contribution,
    Framebuffer,
    load_camera,
    read_video,
    render_pose,
    write_video,
)
from utils_parallel import ParallelMapper

logger = logging.getLogger(__name__)

COLOR_RIDGE = 1e-6
FD_STEP = 1e-3
ARMIJO_C = 1e-4
MAX_HALVINGS = 30
LOGIT_LIMIT = 20.0

FIT_MODES = ("colors", "opacities", "both")


@dataclass(frozen=True, eq=False)
class FitTarget:
    """Target frames of one identity: (pose, framebuffer) pairs seen by one camera."""

    frames: Tuple[Tuple[Pose, Framebuffer], ...]
    camera: Camera
    fps: float = 18.0

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(tuple(pair) for pair in self.frames))
        if not self.frames:
            raise EmptyDataError("fit target")
        for k, (_, frame) in enumerate(self.frames):
            if (frame.width, frame.height) != (self.camera.width, self.camera.height):
                raise InvariantViolationError(
                    f"frames.{k}",
                    f"framebuffer {frame.width}x{frame.height} does not match camera "
                    f"{self.camera.width}x{self.camera.height}",
                )

    def __len__(self) -> int:
        return len(self.frames)


# ============================================================================
# TARGETS
# ============================================================================

def build_fit_target(
    avatar: Avatar,
    sequence: PoseSequence,
    camera: Camera,
    background: Sequence[float] = WHITE,
    max_workers: int = 1
) -> FitTarget:
    """Render a target from a known avatar."""
    poses = list(sequence)
    frames = ParallelMapper(max_workers).map(
        lambda pose: render_pose(avatar, pose, camera, background), poses, "target frames"
    )
    return FitTarget(tuple(zip(poses, frames)), camera, sequence.fps)


def write_fit_target(directory: Union[str, Path], target: FitTarget, skeleton_ref: str) -> Path:
    """Write pose.json, camera.json, frames and meta.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sequence = PoseSequence.from_poses([pose for pose, _ in target.frames], target.fps, skeleton_ref)
    (directory / "pose.json").write_text(dump_pose_sequence(sequence), encoding="utf-8")
    (directory / "camera.json").write_text(
        json.dumps(target.camera.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    write_video(directory, [frame for _, frame in target.frames], target.fps)
    return directory


def load_fit_target(directory: Union[str, Path]) -> FitTarget:
    """
    Load a fit-target directory.

    Args:
        directory: Holds pose.json, camera.json, frame_%06d.png and meta.json

    Returns:
        FitTarget pairing every pose frame with its image

    Raises:
        InvariantViolationError: pose and frame counts differ
    """
    directory = Path(directory)
    pose_path = directory / "pose.json"
    sequence = load_pose_sequence(pose_path.read_text(encoding="utf-8"), str(pose_path))
    camera_path = directory / "camera.json"
    camera = load_camera(camera_path.read_text(encoding="utf-8"), str(camera_path))
    frames, _ = read_video(directory)
    if len(frames) != sequence.num_frames:
        raise InvariantViolationError(
            "frames", f"{len(frames)} images for {sequence.num_frames} poses", str(directory)
        )
    logger.info(f"Loaded fit target {directory}: {len(frames)} frames")
    return FitTarget(tuple(zip(sequence, frames)), camera, sequence.fps)


# ============================================================================
# LOSS
# ============================================================================

def _frame_error(avatar: Avatar, pose: Pose, frame: Framebuffer, camera: Camera) -> float:
    render = render_pose(avatar, pose, camera, frame.background)
    return float(np.mean((render.over_background() - frame.over_background()) ** 2))


def photometric_loss(avatar: Avatar, target: FitTarget, max_workers: int = 1) -> float:
    """
    Mean squared RGB error between renders and targets.

    Averaged over frames, pixels and channels; each frame is rendered over
    its target's background colour.

    Raises:
        DimensionMismatchError: poses do not match avatar.skeleton
    """
    errors = ParallelMapper(max_workers).map(
        lambda pair: _frame_error(avatar, pair[0], pair[1], target.camera), target.frames, "loss frames"
    )
    return float(np.mean(errors))


# ============================================================================
# COLOURS
# ============================================================================

@dataclass
class ColorSystem:
    """Ridge normal equations (AᵀA + λI)·c = Aᵀy + λ·c0, one column per channel."""

    matrix: np.ndarray
    rhs: np.ndarray
    initial: np.ndarray
    coverage: np.ndarray
    gram: np.ndarray = field(repr=False, default=None)
    data_rhs: np.ndarray = field(repr=False, default=None)
    target_energy: np.ndarray = field(repr=False, default=None)
    pixels: int = 0

    def loss(self, colors: np.ndarray) -> float:
        """Photometric loss of `colors` from the accumulated sufficient statistics."""
        c = np.asarray(colors, dtype=np.float64)
        sse = np.sum(c * (self.gram @ c)) - 2.0 * np.sum(c * self.data_rhs) + np.sum(self.target_energy)
        return max(float(sse) / (3.0 * self.pixels), 0.0)


def _design_matrix(
    contributions: Sequence[Contribution], height: int, width: int, n: int
) -> sparse.csr_matrix:
    """Sparse (H·W)×n blend-weight matrix; each splat fills only its footprint window."""
    grid = np.arange(height * width).reshape(height, width)
    rows, cols, data = [], [], []
    for c in contributions:
        window = grid[c.rows, c.cols]
        rows.append(window.ravel())
        cols.append(np.full(window.size, c.index))
        data.append(np.broadcast_to(c.weights, window.shape).ravel())
    if not rows:
        return sparse.csr_matrix((height * width, n))
    # duplicates are summed on conversion
    return sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(height * width, n),
    ).tocsr()


def color_normal_equations(avatar: Avatar, target: FitTarget, ridge: float = COLOR_RIDGE) -> ColorSystem:
    """
    Accumulate the colour least-squares system over all target frames.

    Each frame is rendered once with blend-weight collection; the residual
    target of a pixel is its target colour minus the background seen
    through the render (background·T), which does not depend on colours.
    """
    n = avatar.num_splats
    gram = np.zeros((n, n))
    aty = np.zeros((n, 3))
    energy = np.zeros(3)
    coverage = np.zeros(n)
    pixels = 0

    for pose, frame in target.frames:
        contributions: List[Contribution] = []
        render = render_pose(avatar, pose, target.camera, frame.background, contributions)
        height, width = render.height, render.width
        design = _design_matrix(contributions, height, width, n)

        seen_background = np.asarray(frame.background) * (1.0 - render.alpha)[..., None]
        y = (frame.over_background() - seen_background).reshape(-1, 3)

        gram += (design.T @ design).toarray()
        aty += design.T @ y
        energy += np.sum(y * y, axis=0)
        coverage += np.asarray(design.sum(axis=0)).ravel()
        pixels += height * width

    initial = np.array(avatar.colors)
    return ColorSystem(
        matrix=gram + ridge * np.eye(n),
        rhs=aty + ridge * initial,
        initial=initial,
        coverage=coverage / pixels,
        gram=gram,
        data_rhs=aty,
        target_energy=energy,
        pixels=pixels,
    )


def fit_colors(avatar: Avatar, target: FitTarget) -> Tuple[Avatar, FitReport]:
    """
    Least-squares colour fit with geometry and opacity fixed.

    Args:
        avatar: Avatar whose colours are refit
        target: Target frames

    Returns:
        (avatar with new colours clamped to [0, 1], FitReport). If clamping
        made the solution worse than the input, the input colours are kept
        and the report is marked not converged.
    """
    system = color_normal_equations(avatar, target)
    solution = linalg.solve(system.matrix, system.rhs, assume_a="pos")
    assert np.all(np.isfinite(solution)), "ridge system must be non-singular"

    colors = np.clip(solution, 0.0, 1.0)
    initial_loss = system.loss(system.initial)
    final_loss = system.loss(colors)
    converged = True
    if final_loss > initial_loss:
        converged = final_loss - initial_loss <= 1e-12
        colors, final_loss = system.initial, initial_loss

    report = FitReport(
        initial_loss=initial_loss, final_loss=final_loss, iterations=1, converged=converged,
        history=[initial_loss, final_loss],
    )
    logger.info(
        f"Colour fit '{avatar.id}': loss {initial_loss:.6g} -> {final_loss:.6g} "
        f"({avatar.num_splats} splats, {len(target)} frames)"
    )
    return avatar.with_appearance(colors=colors), report


# ============================================================================
# OPACITIES
# ============================================================================

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def opacity_logits(avatar: Avatar) -> np.ndarray:
    o = np.clip(avatar.opacities, 1e-9, 1.0 - 1e-9)
    return np.clip(np.log(o / (1.0 - o)), -LOGIT_LIMIT, LOGIT_LIMIT)


def opacity_loss(avatar: Avatar, target: FitTarget, logits: np.ndarray, max_workers: int = 1) -> float:
    """photometric_loss with opacities sigmoid(logits)."""
    return photometric_loss(avatar.with_appearance(opacities=_sigmoid(logits)), target, max_workers)


def opacity_gradient(
    avatar: Avatar,
    target: FitTarget,
    logits: np.ndarray,
    h: float = FD_STEP,
    max_workers: int = 1,
    loss_at: Optional[float] = None
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Central differences of the loss in logit space.

    Returns:
        (loss, gradient, diagonal curvature), the curvature taken from the
        same evaluations as the gradient
    """
    base = opacity_loss(avatar, target, logits, max_workers) if loss_at is None else loss_at
    n = len(logits)
    gradient = np.zeros(n)
    curvature = np.zeros(n)
    for i in range(n):
        step = np.zeros(n)
        step[i] = h
        up = opacity_loss(avatar, target, logits + step, max_workers)
        down = opacity_loss(avatar, target, logits - step, max_workers)
        gradient[i] = (up - down) / (2.0 * h)
        curvature[i] = (up - 2.0 * base + down) / (h * h)
    return base, gradient, curvature


def fit_opacities(
    avatar: Avatar,
    target: FitTarget,
    steps: int,
    max_workers: int = 1,
    gradient_tolerance: float = 1e-10
) -> Tuple[Avatar, FitReport]:
    """
    Descent on logit-opacities with a backtracking line search.

    Each step uses central-difference gradients (h = 1e-3), scales each
    coordinate by its positive diagonal curvature (plain gradient where the
    curvature is not positive), then halves a unit step until the Armijo
    condition with c = 1e-4 holds.

    Args:
        avatar: Avatar whose opacities are refit
        target: Target frames
        steps: Number of descent steps (≥ 1)
        max_workers: Frame-level parallelism of loss evaluations
        gradient_tolerance: Gradient norm treated as stationary

    Returns:
        (avatar with opacities in (0, 1), FitReport). A failed line search
        stops early with converged = False.
    """
    if steps < 1:
        raise InvariantViolationError("steps", "must be at least 1")

    logits = opacity_logits(avatar)
    loss = opacity_loss(avatar, target, logits, max_workers)
    initial_loss = loss
    accepted = 0
    history = [initial_loss]
    converged = False

    for step in range(steps):
        loss, gradient, curvature = opacity_gradient(
            avatar, target, logits, max_workers=max_workers, loss_at=loss
        )
        if np.linalg.norm(gradient) <= gradient_tolerance:
            converged = True
            break

        scale = np.where(curvature > 0, 1.0 / np.where(curvature > 0, curvature, 1.0), 1.0)
        direction = -scale * gradient
        slope = float(gradient @ direction)

        size = 1.0
        for _ in range(MAX_HALVINGS):
            trial = np.clip(logits + size * direction, -LOGIT_LIMIT, LOGIT_LIMIT)
            trial_loss = opacity_loss(avatar, target, trial, max_workers)
            if trial_loss <= loss + ARMIJO_C * size * slope:
                break
            size *= 0.5
        else:
            logger.warning(f"Opacity line search failed at step {step + 1}; keeping current iterate")
            break

        logits, loss = trial, trial_loss
        accepted += 1
        history.append(loss)
        logger.debug(f"Opacity step {step + 1}: loss {loss:.6g} (step size {size:g})")
    else:
        converged = True

    fitted = avatar if accepted == 0 else avatar.with_appearance(opacities=_sigmoid(logits))
    final_loss = min(loss, initial_loss)
    report = FitReport(
        initial_loss=initial_loss, final_loss=final_loss, iterations=accepted, converged=converged,
        history=history,
    )
    logger.info(
        f"Opacity fit '{avatar.id}': loss {initial_loss:.6g} -> {final_loss:.6g} in {accepted} steps"
    )
    return fitted, report


def fit_avatar(
    avatar: Avatar,
    target: FitTarget,
    mode: str = "both",
    steps: int = 20,
    max_workers: int = 1
) -> Tuple[Avatar, List[FitReport]]:
    """Run the fits selected by `mode` ("colors", "opacities" or "both", colours first)."""
    if mode not in FIT_MODES:
        raise InvariantViolationError("mode", f"unknown fit mode '{mode}' ({', '.join(FIT_MODES)})")
    reports = []
    if mode in ("colors", "both"):
        avatar, report = fit_colors(avatar, target)
        reports.append(report)
    if mode in ("opacities", "both"):
        avatar, report = fit_opacities(avatar, target, steps, max_workers)
        reports.append(report)
    return avatar, reports
