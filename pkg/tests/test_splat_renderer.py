"""
Tests for Splat Projection and Rasterization
============================================
"""

import math

import numpy as np
import pytest

from avatar_model import PosedSplats, rest_pose
from errors import InvariantViolationError
from splat_renderer import (
    ALPHA_CAP,
    COV_DILATION,
    Camera,
    Framebuffer,
    Splat2D,
    cutoff_sigmas,
    default_camera,
    load_camera,
    project_splat,
    project_splats,
    rasterize,
    read_video,
    render_pose,
    render_sequence,
    write_video,
)
from pose_sequence import PoseSequence
from utils_quaternion import axis_angle, quat_multiply, quat_to_matrix


def posed(means, colors=None, opacities=None, scale=0.1, rots=None):
    means = np.asarray(means, dtype=float)
    n = len(means)
    return PosedSplats(
        means=means,
        rots=np.tile([1.0, 0, 0, 0], (n, 1)) if rots is None else np.asarray(rots),
        scales=np.full((n, 3), scale),
        colors=np.asarray(colors if colors is not None else [[0.2, 0.4, 0.6]] * n, dtype=float),
        opacities=np.asarray(opacities if opacities is not None else [0.8] * n, dtype=float),
    )


# ============================================================================
# CAMERA
# ============================================================================

class TestCamera:
    """Test camera construction and resolution changes."""

    def test_default_camera(self):
        camera = default_camera()
        assert (camera.width, camera.height, camera.focal) == (128, 128, 187.0)

    def test_at_resolution_keeps_axis(self):
        camera = default_camera(64, 64)
        assert camera.focal == pytest.approx(93.5)
        np.testing.assert_allclose(camera.principal, [31.5, 31.5])

    def test_load_camera(self, front_camera):
        camera = load_camera(front_camera.to_dict())
        np.testing.assert_array_equal(camera.orientation, front_camera.orientation)

    def test_bad_focal(self):
        with pytest.raises(InvariantViolationError):
            Camera((0, 0, 0), (1, 0, 0, 0), 0.0, (0, 0), 8, 8)

    def test_jitter_is_seeded_and_small(self):
        camera = default_camera()
        a = camera.jittered(np.random.default_rng(3), 0.05, 3.0)
        b = camera.jittered(np.random.default_rng(3), 0.05, 3.0)
        assert a.focal == b.focal
        assert abs(a.focal / camera.focal - 1.0) <= 0.05
        angle = 2 * math.degrees(math.acos(min(1.0, abs(float(np.dot(a.orientation, camera.orientation))))))
        assert angle <= 3.0 + 1e-9


# ============================================================================
# PROJECTION
# ============================================================================

class TestProjection:
    """Test splat projection and culling."""

    def test_isotropic_covariance(self, front_camera):
        splat = project_splat(posed([[0.0, 0.0, 0.0]]), front_camera)
        expected = (100.0 * 0.1 / 5.0) ** 2 + COV_DILATION
        np.testing.assert_allclose(splat.center, [32.0, 32.0])
        np.testing.assert_allclose(splat.cov2d, expected * np.eye(2), atol=1e-12)
        assert splat.depth == pytest.approx(5.0)

    def test_world_up_is_image_up(self, front_camera):
        splat = project_splat(posed([[0.0, 0.5, 0.0]]), front_camera)
        assert splat.center[1] == pytest.approx(32.0 - 10.0)

    def test_behind_camera_culled(self, front_camera):
        assert project_splats(posed([[0.0, 0.0, 6.0]]), front_camera) == []

    def test_transparent_culled(self, front_camera):
        assert project_splats(posed([[0.0, 0.0, 0.0]], opacities=[0.001]), front_camera) == []

    def test_outside_viewport_culled(self, front_camera):
        assert project_splats(posed([[10.0, 0.0, 0.0]]), front_camera) == []

    def test_indices_refer_to_input(self, front_camera):
        splats = project_splats(posed([[0.0, 0.0, 6.0], [0.0, 0.0, 0.0]]), front_camera)
        assert [s.index for s in splats] == [1]

    def test_non_spd_covariance_rejected(self):
        with pytest.raises(InvariantViolationError):
            Splat2D(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), 1.0, np.zeros(3), 0.5)

    def test_cutoff_sigmas(self):
        assert cutoff_sigmas(0.01) == 3.0
        assert cutoff_sigmas(1.0) == pytest.approx(math.sqrt(2 * math.log(255 * ALPHA_CAP)))


# ============================================================================
# RASTERIZATION
# ============================================================================

class TestRasterize:
    """Test front-to-back blending."""

    def test_empty_frame_is_background(self, front_camera):
        frame = rasterize([], front_camera)
        assert np.all(frame.alpha == 0.0)
        assert np.all(frame.over_background() == 1.0)

    def test_single_splat_centre(self, front_camera):
        frame = rasterize(project_splats(posed([[0.0, 0.0, 0.0]]), front_camera), front_camera)
        assert frame.alpha[32, 32] == pytest.approx(0.8)
        np.testing.assert_allclose(frame.color[32, 32], 0.8 * np.array([0.2, 0.4, 0.6]))
        np.testing.assert_allclose(frame.over_background()[32, 32], 0.8 * np.array([0.2, 0.4, 0.6]) + 0.2)

    def test_single_splat_falloff(self, front_camera):
        frame = rasterize(project_splats(posed([[0.0, 0.0, 0.0]]), front_camera), front_camera)
        variance = (100.0 * 0.1 / 5.0) ** 2 + COV_DILATION
        assert frame.alpha[32, 33] == pytest.approx(0.8 * math.exp(-0.5 / variance))
        assert frame.alpha[0, 0] == 0.0

    def test_alpha_capped(self, front_camera):
        frame = rasterize(project_splats(posed([[0.0, 0.0, 0.0]], opacities=[1.0]), front_camera), front_camera)
        assert frame.alpha[32, 32] == pytest.approx(ALPHA_CAP)

    def test_front_splat_occludes(self, front_camera):
        splats = project_splats(
            posed([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]], colors=[[0, 0, 1], [1, 0, 0]], opacities=[1.0, 1.0]),
            front_camera,
        )
        frame = rasterize(splats, front_camera)
        np.testing.assert_allclose(frame.color[32, 32], [0.99, 0.0, 0.99 * 0.01], atol=1e-12)

    def test_input_order_irrelevant(self, front_camera):
        splats = project_splats(
            posed([[0.0, 0.0, 0.0], [0.05, 0.0, 1.0], [-0.05, 0.02, -0.5]],
                  colors=[[0, 0, 1], [1, 0, 0], [0, 1, 0]]),
            front_camera,
        )
        a = rasterize(splats, front_camera)
        b = rasterize(splats[::-1], front_camera)
        np.testing.assert_array_equal(a.color, b.color)
        np.testing.assert_array_equal(a.alpha, b.alpha)

    def test_contributions_sum_to_alpha(self, front_camera):
        rng = np.random.default_rng(2)
        splats = project_splats(posed(rng.uniform(-0.5, 0.5, (12, 3)), opacities=rng.uniform(0.2, 1, 12)),
                                front_camera)
        contributions = []
        frame = rasterize(splats, front_camera, contributions=contributions)
        total = np.zeros_like(frame.alpha)
        for contribution in contributions:
            total[contribution.rows, contribution.cols] += contribution.weights
        np.testing.assert_allclose(total, frame.alpha, atol=1e-12)

    def test_rigid_motion_of_scene_and_camera(self, front_camera):
        """Moving splats and camera by the same rigid transform leaves the image unchanged."""
        rng = np.random.default_rng(7)
        scene = posed(rng.uniform(-0.4, 0.4, (8, 3)), colors=rng.uniform(0, 1, (8, 3)))
        q = axis_angle([0.3, 1.0, 0.2], 0.7)
        t = np.array([0.5, -1.0, 2.0])
        moved = PosedSplats(
            means=scene.means @ quat_to_matrix(q).T + t,
            rots=quat_multiply(q, scene.rots),
            scales=scene.scales,
            colors=scene.colors,
            opacities=scene.opacities,
        )
        camera = front_camera.transformed(q, t)
        a = rasterize(project_splats(scene, front_camera), front_camera)
        b = rasterize(project_splats(moved, camera), camera)
        np.testing.assert_allclose(b.color, a.color, atol=1e-9)
        np.testing.assert_allclose(b.alpha, a.alpha, atol=1e-9)


# ============================================================================
# FRAMES AND VIDEOS
# ============================================================================

class TestVideos:
    """Test framebuffers, sequence rendering and video directories."""

    def test_rgba_round_trip(self, grid_avatar, front_camera):
        frame = render_pose(grid_avatar, rest_pose(grid_avatar.skeleton), front_camera)
        again = Framebuffer.from_rgba(frame.to_rgba())
        np.testing.assert_allclose(again.color, frame.color, atol=1e-12)
        np.testing.assert_allclose(again.alpha, frame.alpha)

    def test_render_sequence_parallel_matches_serial(self, grid_avatar, front_camera):
        rots = np.tile([1.0, 0, 0, 0], (4, 2, 1))
        root_t = np.linspace([0, 0, 0], [0.3, 0.1, 0], 4)
        sequence = PoseSequence(10.0, "test", root_t, rots)
        serial = render_sequence(grid_avatar, sequence, front_camera, max_workers=1)
        parallel = render_sequence(grid_avatar, sequence, front_camera, max_workers=3)
        for a, b in zip(serial, parallel):
            np.testing.assert_array_equal(a.color, b.color)

    def test_write_and_read_video(self, tmp_path, grid_avatar, front_camera):
        frames = [render_pose(grid_avatar, rest_pose(grid_avatar.skeleton), front_camera)] * 2
        directory = write_video(tmp_path / "video", frames, 12.0)
        loaded, meta = read_video(directory)
        assert len(loaded) == 2
        assert meta["fps"] == 12.0
        assert meta["background"] == [1.0, 1.0, 1.0]
        np.testing.assert_allclose(loaded[0].over_background(), frames[0].over_background(), atol=1.0 / 255 + 1e-9)
        np.testing.assert_allclose(loaded[0].alpha, frames[0].alpha, atol=0.5 / 255 + 1e-9)


if __name__ == "__main__":
    pytest.main([__file__, "-v", "--tb=short"])
