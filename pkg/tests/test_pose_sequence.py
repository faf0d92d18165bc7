"""
Tests for Pose Sequences, Resampling and Keypoint Conversion
============================================================
"""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avatar_model import build_humanoid_skeleton
from errors import (
    ConfigurationError,
    DegenerateBoneError,
    DimensionMismatchError,
    DocumentFormatError,
    InvariantViolationError,
)
from motion_library import TOY_CLASSES, identity_capture_motion, scripted_motion
from pose_sequence import (
    KeypointSequence,
    PoseSequence,
    dump_keypoint_sequence,
    dump_pose_sequence,
    keypoints_from_pose,
    keypoints_to_pose,
    load_keypoint_sequence,
    load_pose_sequence,
    normalization_preset,
    resample,
)
from pydantic_models import NormalizationPolicy
from utils_quaternion import axis_angle, quat_to_matrix


# ============================================================================
# FIXTURES
# ============================================================================

def random_sequence(num_frames, num_joints, seed=0, fps=30.0):
    rng = np.random.default_rng(seed)
    rots = rng.normal(size=(num_frames, num_joints, 4))
    rots /= np.linalg.norm(rots, axis=2, keepdims=True)
    return PoseSequence(fps, "test", rng.normal(size=(num_frames, 3)), rots)


@pytest.fixture
def pose_document():
    identity = [1.0, 0.0, 0.0, 0.0]
    return {
        "version": 1,
        "fps": 30.0,
        "skeleton_ref": "two_joint",
        "frames": [
            {"root_t": [0.0, 0.0, float(k)], "rots": [identity, identity]}
            for k in range(4)
        ],
    }


# ============================================================================
# FILES
# ============================================================================

class TestPoseFiles:
    """Test pose and keypoint file loading."""

    def test_load(self, pose_document):
        sequence = load_pose_sequence(pose_document, "p.json")
        assert sequence.num_frames == 4
        assert sequence.num_joints == 2
        assert sequence.duration == pytest.approx(0.1)
        np.testing.assert_array_equal(sequence.frame(3).root_t, [0, 0, 3])

    def test_inconsistent_joint_count_names_frame(self, pose_document):
        pose_document["frames"][2]["rots"].append([1.0, 0.0, 0.0, 0.0])
        with pytest.raises(InvariantViolationError) as exc_info:
            load_pose_sequence(pose_document, "p.json")
        assert exc_info.value.field_path == "frames.2.rots"
        assert "frame 2" in exc_info.value.message

    def test_bad_quaternion_names_frame_and_joint(self, pose_document):
        pose_document["frames"][1]["rots"][1] = [0.5, 0.0, 0.0, 0.0]
        with pytest.raises(InvariantViolationError) as exc_info:
            load_pose_sequence(pose_document)
        assert exc_info.value.field_path == "frames.1.rots.1"

    def test_missing_fps(self, pose_document):
        del pose_document["fps"]
        with pytest.raises(DocumentFormatError):
            load_pose_sequence(pose_document)

    def test_dump_is_exact(self):
        sequence = random_sequence(5, 3, seed=4)
        again = load_pose_sequence(dump_pose_sequence(sequence))
        np.testing.assert_array_equal(again.rots, sequence.rots)
        np.testing.assert_array_equal(again.root_t, sequence.root_t)

    def test_keypoint_file(self):
        keypoints = KeypointSequence(10.0, np.arange(2 * 3 * 3, dtype=float).reshape(2, 3, 3))
        again = load_keypoint_sequence(dump_keypoint_sequence(keypoints))
        np.testing.assert_array_equal(again.positions, keypoints.positions)

    def test_keypoint_frame_mismatch(self):
        document = {"version": 1, "fps": 10.0, "frames": [[[0, 0, 0], [0, 1, 0]], [[0, 0, 0]]]}
        with pytest.raises(InvariantViolationError, match="frame 1"):
            load_keypoint_sequence(json.dumps(document))


# ============================================================================
# RESAMPLING
# ============================================================================

class TestResample:
    """Test length and rate normalisation."""

    @pytest.mark.parametrize("preset,expected", [("identity", 324), ("reference", 500)])
    def test_presets(self, preset, expected):
        sequence = random_sequence(37, 3)
        out = resample(sequence, normalization_preset(preset))
        assert out.num_frames == expected
        assert out.fps == normalization_preset(preset).target_fps

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            normalization_preset("60s@60fps")

    def test_endpoints_exact(self):
        sequence = random_sequence(23, 4, seed=2)
        out = resample(sequence, NormalizationPolicy(target_seconds=20, target_fps=25))
        np.testing.assert_array_equal(out.rots[0], sequence.rots[0])
        np.testing.assert_array_equal(out.rots[-1], sequence.rots[-1])
        np.testing.assert_array_equal(out.root_t[0], sequence.root_t[0])
        np.testing.assert_array_equal(out.root_t[-1], sequence.root_t[-1])

    def test_single_frame_repeats(self):
        sequence = random_sequence(1, 2)
        out = resample(sequence, NormalizationPolicy(target_seconds=1, target_fps=5))
        assert out.num_frames == 5
        np.testing.assert_array_equal(out.rots, np.repeat(sequence.rots, 5, axis=0))

    def test_midpoint_interpolation(self):
        rots = np.stack([
            np.stack([[1.0, 0, 0, 0], axis_angle([0, 0, 1], 0.0)]),
            np.stack([[1.0, 0, 0, 0], axis_angle([0, 0, 1], np.pi / 2)]),
        ])
        sequence = PoseSequence(1.0, "test", [[0, 0, 0], [2, 0, 0]], rots)
        out = resample(sequence, NormalizationPolicy(target_seconds=1.5, target_fps=2))
        assert out.num_frames == 3
        np.testing.assert_allclose(out.root_t[1], [1, 0, 0])
        np.testing.assert_allclose(abs(np.dot(out.rots[1, 1], axis_angle([0, 0, 1], np.pi / 4))), 1.0)

    @settings(max_examples=30, deadline=None)
    @given(
        st.integers(min_value=1, max_value=60),
        st.floats(min_value=1.0, max_value=30.0),
        st.floats(min_value=2.0, max_value=30.0),
    )
    def test_unit_norm_and_length(self, frames, seconds, fps):
        sequence = random_sequence(frames, 3, seed=frames)
        policy = NormalizationPolicy(target_seconds=seconds, target_fps=fps)
        out = resample(sequence, policy)
        assert out.num_frames == int(seconds * fps + 0.5)
        np.testing.assert_allclose(np.linalg.norm(out.rots, axis=2), 1.0, atol=1e-9)


# ============================================================================
# KEYPOINTS
# ============================================================================

class TestKeypoints:
    """Test keypoint to rotation conversion."""

    def test_chain_round_trip(self, chain_skeleton):
        sequence = random_sequence(6, chain_skeleton.num_joints, seed=8)
        keypoints = keypoints_from_pose(sequence, chain_skeleton)
        recovered = keypoints_to_pose(keypoints, chain_skeleton, "chain")
        again = keypoints_from_pose(recovered, chain_skeleton)
        np.testing.assert_allclose(again.positions, keypoints.positions, atol=1e-9)
        assert recovered.skeleton_ref == "chain"

    def test_rest_keypoints_give_identity(self, chain_skeleton):
        keypoints = KeypointSequence(10.0, chain_skeleton.rest_positions[None])
        sequence = keypoints_to_pose(keypoints, chain_skeleton)
        np.testing.assert_allclose(sequence.rots[0], np.tile([1.0, 0, 0, 0], (4, 1)), atol=1e-12)
        np.testing.assert_allclose(sequence.root_t[0], 0.0, atol=1e-12)

    @pytest.mark.parametrize("which", ["chain", "humanoid"])
    def test_rigid_turn_moves_only_the_root(self, chain_skeleton, which):
        """Whole body turned 45° about +z: root rotation is that turn, every other joint identity."""
        skeleton = chain_skeleton if which == "chain" else build_humanoid_skeleton()
        rest = skeleton.rest_positions
        turn = axis_angle((0.0, 0.0, 1.0), np.pi / 4)
        turned = (rest - rest[0]) @ quat_to_matrix(turn).T + rest[0]

        sequence = keypoints_to_pose(KeypointSequence(10.0, turned[None]), skeleton)

        assert abs(float(sequence.rots[0, 0] @ turn)) == pytest.approx(1.0, abs=1e-10)
        identity = np.tile([1.0, 0.0, 0.0, 0.0], (skeleton.num_joints - 1, 1))
        np.testing.assert_allclose(np.abs(sequence.rots[0, 1:]), identity, atol=1e-5)
        np.testing.assert_allclose(sequence.root_t[0], 0.0, atol=1e-12)

    def test_degenerate_bone(self, chain_skeleton):
        positions = np.repeat(chain_skeleton.rest_positions[None], 3, axis=0)
        positions[2, 2] = positions[2, 1]
        with pytest.raises(DegenerateBoneError) as exc_info:
            keypoints_to_pose(KeypointSequence(10.0, positions), chain_skeleton)
        assert exc_info.value.joint == "b"
        assert exc_info.value.parent_joint == "a"
        assert exc_info.value.frame == 2
        assert "'a' -> 'b'" in exc_info.value.message

    def test_joint_count_mismatch(self, chain_skeleton):
        with pytest.raises(DimensionMismatchError):
            keypoints_to_pose(KeypointSequence(10.0, np.zeros((2, 3, 3))), chain_skeleton)


# ============================================================================
# MOTION LIBRARY
# ============================================================================

class TestMotionLibrary:
    """Test scripted reference motions."""

    @pytest.fixture(scope="class")
    def skeleton(self):
        return build_humanoid_skeleton()

    def test_eight_classes(self):
        assert len(TOY_CLASSES) == 8

    @pytest.mark.parametrize("label", TOY_CLASSES)
    def test_every_class_scripts(self, skeleton, label):
        sequence = scripted_motion(label, skeleton, seed=3, seconds=2.0, fps=8.0)
        assert sequence.num_frames == 16
        assert sequence.num_joints == 24
        np.testing.assert_allclose(np.linalg.norm(sequence.rots, axis=2), 1.0, atol=1e-9)

    def test_seeded(self, skeleton):
        a = scripted_motion("kick", skeleton, seed=5)
        b = scripted_motion("kick", skeleton, seed=5)
        c = scripted_motion("kick", skeleton, seed=6)
        np.testing.assert_array_equal(a.rots, b.rots)
        assert not np.allclose(a.rots, c.rots)

    def test_unknown_class(self, skeleton):
        with pytest.raises(ConfigurationError):
            scripted_motion("dance", skeleton, seed=0)

    def test_identity_capture_length(self, skeleton):
        assert identity_capture_motion(skeleton).num_frames == 324

    def test_identity_capture_needs_humanoid(self, chain_skeleton):
        with pytest.raises(InvariantViolationError, match="pelvis"):
            identity_capture_motion(chain_skeleton)


if __name__ == "__main__":
    pytest.main([__file__, "-v", "--tb=short"])
