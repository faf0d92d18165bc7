"""
Tests for Avatar Model and Skinning
===================================
"""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avatar_model import (
    Joint,
    Pose,
    Skeleton,
    avatar_to_dict,
    build_avatar_from_spec,
    build_humanoid_avatar,
    build_humanoid_skeleton,
    dump_avatar,
    forward_kinematics,
    joint_positions,
    rest_pose,
    skin_avatar,
)
from errors import DimensionMismatchError, DocumentFormatError, InvariantViolationError
from tests.conftest import make_avatar
from utils_quaternion import axis_angle, quat_multiply, quat_to_matrix


RZ90 = np.array([np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)])


def random_pose(skeleton, rng, root_scale=0.5):
    rots = rng.normal(size=(skeleton.num_joints, 4))
    rots /= np.linalg.norm(rots, axis=1, keepdims=True)
    return Pose(rng.normal(scale=root_scale, size=3), rots)


# ============================================================================
# LOADING
# ============================================================================

class TestAvatarDocument:
    """Test avatar file loading."""

    def test_load_valid(self, avatar_document):
        avatar = build_avatar_from_spec(avatar_document, "a.json")
        assert avatar.id == "doc_avatar"
        assert avatar.num_splats == 2
        assert avatar.skeleton.names == ["root", "child"]
        live = avatar.weight_values[0] > 0
        weights = zip(avatar.weight_joints[0][live].tolist(), avatar.weight_values[0][live].tolist())
        assert dict(weights) == {0: 0.25, 1: 0.75}

    def test_load_from_json_text(self, avatar_document):
        avatar = build_avatar_from_spec(json.dumps(avatar_document))
        assert avatar.num_splats == 2

    def test_invalid_json(self):
        with pytest.raises(DocumentFormatError, match="invalid JSON"):
            build_avatar_from_spec("{not json", "bad.json")

    def test_unknown_field(self, avatar_document):
        avatar_document["colour"] = "red"
        with pytest.raises(DocumentFormatError):
            build_avatar_from_spec(avatar_document)

    def test_near_unit_rotation_is_renormalized(self, avatar_document):
        avatar_document["splats"][0]["rot"] = [1.0005, 0.0, 0.0, 0.0]
        avatar = build_avatar_from_spec(avatar_document)
        assert np.linalg.norm(avatar.rots[0]) == pytest.approx(1.0, abs=1e-12)

    def test_far_from_unit_rotation_rejected(self, avatar_document):
        avatar_document["splats"][1]["rot"] = [1.01, 0.0, 0.0, 0.0]
        with pytest.raises(InvariantViolationError) as exc_info:
            build_avatar_from_spec(avatar_document)
        assert exc_info.value.field_path == "splats.1.rot"

    def test_weight_joint_out_of_range(self, avatar_document):
        avatar_document["splats"][0]["weights"] = [[5, 1.0]]
        with pytest.raises(InvariantViolationError) as exc_info:
            build_avatar_from_spec(avatar_document, "a.json")
        assert exc_info.value.field_path == "splats.0.weights.0"

    def test_dump_reloads(self, avatar_document):
        avatar = build_avatar_from_spec(avatar_document)
        again = build_avatar_from_spec(dump_avatar(avatar))
        np.testing.assert_array_equal(again.means, avatar.means)
        np.testing.assert_array_equal(again.weight_values, avatar.weight_values)
        assert avatar_to_dict(again) == avatar_to_dict(avatar)

    def test_arrays_are_read_only(self, avatar_document):
        avatar = build_avatar_from_spec(avatar_document)
        with pytest.raises(ValueError):
            avatar.means[0, 0] = 1.0


class TestSkeleton:
    """Test skeleton invariants."""

    def test_root_must_be_first(self):
        with pytest.raises(InvariantViolationError):
            Skeleton((Joint("a", 1, (0, 1, 0)), Joint("b", None, (0, 0, 0))))

    def test_unique_names(self):
        with pytest.raises(InvariantViolationError):
            Skeleton((Joint("a", None, (0, 0, 0)), Joint("a", 0, (0, 1, 0))))

    def test_children_and_rest_positions(self, chain_skeleton):
        assert chain_skeleton.children == ((1,), (2,), (3,), ())
        np.testing.assert_allclose(
            chain_skeleton.rest_positions,
            [[0, 0.5, 0], [0, 0.9, 0], [0.3, 0.9, 0], [0.3, 0.9, 0.25]],
        )

    def test_humanoid_has_24_joints(self):
        skeleton = build_humanoid_skeleton()
        assert skeleton.num_joints == 24
        assert skeleton.names[0] == "pelvis"


# ============================================================================
# KINEMATICS
# ============================================================================

class TestForwardKinematics:
    """Test FK and linear blend skinning."""

    def test_rest_pose_matches_offsets(self, chain_skeleton):
        transforms = forward_kinematics(chain_skeleton, rest_pose(chain_skeleton))
        np.testing.assert_allclose(joint_positions(transforms), chain_skeleton.rest_positions)
        np.testing.assert_allclose(transforms[:, :3, :3], np.tile(np.eye(3), (4, 1, 1)))

    def test_rest_pose_skinning_is_identity(self, avatar_document):
        avatar = build_avatar_from_spec(avatar_document)
        posed = skin_avatar(avatar, rest_pose(avatar.skeleton))
        np.testing.assert_allclose(posed.means, avatar.means, atol=1e-12)
        np.testing.assert_allclose(posed.rots, avatar.rots, atol=1e-12)

    def test_pose_joint_count_mismatch(self, two_joint_skeleton, chain_skeleton):
        with pytest.raises(DimensionMismatchError):
            forward_kinematics(two_joint_skeleton, rest_pose(chain_skeleton))

    def test_pose_rejects_non_unit_rotation(self):
        with pytest.raises(InvariantViolationError):
            Pose(np.zeros(3), [[1, 0, 0, 0], [2, 0, 0, 0]])

    def test_child_rotation_moves_only_descendants(self, two_joint_skeleton):
        pose = Pose(np.zeros(3), [[1, 0, 0, 0], RZ90])
        positions = joint_positions(forward_kinematics(two_joint_skeleton, pose))
        np.testing.assert_allclose(positions, [[0, 0, 0], [0, 1, 0]], atol=1e-12)

    def test_two_joint_blend(self, two_joint_skeleton):
        avatar = make_avatar(
            two_joint_skeleton,
            means=[(0.0, 1.5, 0.0)],
            scales=[(0.1, 0.1, 0.1)],
            colors=[(0.5, 0.5, 0.5)],
            opacities=[1.0],
            weights=[[(0, 0.5), (1, 0.5)]],
        )
        posed = skin_avatar(avatar, Pose(np.zeros(3), [[1, 0, 0, 0], RZ90]))
        np.testing.assert_allclose(posed.means[0], [-0.25, 1.25, 0.0], atol=1e-12)

    def test_rotation_follows_dominant_joint(self, two_joint_skeleton):
        avatar = make_avatar(
            two_joint_skeleton,
            means=[(0.0, 1.5, 0.0)],
            scales=[(0.1, 0.1, 0.1)],
            colors=[(0.5, 0.5, 0.5)],
            opacities=[1.0],
            weights=[[(0, 0.3), (1, 0.7)]],
        )
        posed = skin_avatar(avatar, Pose(np.zeros(3), [[1, 0, 0, 0], RZ90]))
        assert abs(np.dot(posed.rots[0], RZ90)) == pytest.approx(1.0)

    def test_root_translation(self, avatar_document):
        avatar = build_avatar_from_spec(avatar_document)
        pose = Pose(np.array([0.5, -0.2, 1.0]), np.tile([1.0, 0, 0, 0], (2, 1)))
        posed = skin_avatar(avatar, pose)
        np.testing.assert_allclose(posed.means, avatar.means + [0.5, -0.2, 1.0], atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_rigid_equivariance(self, seed):
        """Rotating and shifting the whole body moves every posed splat rigidly."""
        rng = np.random.default_rng(seed)
        avatar = build_humanoid_avatar("H", seed=3, splats_per_bone=2, height_scale=1.0)
        skeleton = avatar.skeleton
        pose = random_pose(skeleton, rng)

        q_g = rng.normal(size=4)
        q_g /= np.linalg.norm(q_g)
        t_g = rng.normal(size=3)
        r_g = quat_to_matrix(q_g)
        offset = skeleton.offsets[0]

        rots = pose.rots.copy()
        rots[0] = quat_multiply(q_g, rots[0])
        moved_pose = Pose(r_g @ (pose.root_t + offset) + t_g - offset, rots)

        before = skin_avatar(avatar, pose).means
        after = skin_avatar(avatar, moved_pose).means
        np.testing.assert_allclose(after, before @ r_g.T + t_g, atol=1e-9)


# ============================================================================
# HUMANOID
# ============================================================================

class TestHumanoidAvatar:
    """Test procedural identities."""

    def test_deterministic(self):
        a = build_humanoid_avatar("A", seed=9, splats_per_bone=3)
        b = build_humanoid_avatar("A", seed=9, splats_per_bone=3)
        np.testing.assert_array_equal(a.means, b.means)
        np.testing.assert_array_equal(a.colors, b.colors)

    def test_seeds_differ(self):
        a = build_humanoid_avatar("A", seed=1, splats_per_bone=3)
        b = build_humanoid_avatar("B", seed=2, splats_per_bone=3)
        assert not np.allclose(a.colors, b.colors)

    def test_valid_weights_and_values(self):
        avatar = build_humanoid_avatar("A", seed=5, splats_per_bone=4)
        np.testing.assert_allclose(avatar.weight_values.sum(axis=1), 1.0)
        assert np.all((avatar.colors >= 0) & (avatar.colors <= 1))
        np.testing.assert_allclose(np.linalg.norm(avatar.rots, axis=1), 1.0)
        assert build_avatar_from_spec(dump_avatar(avatar)).num_splats == avatar.num_splats

    def test_splats_follow_arm(self):
        avatar = build_humanoid_avatar("A", seed=5, splats_per_bone=4, height_scale=1.0)
        skeleton = avatar.skeleton
        shoulder = skeleton.index_of("left_shoulder")
        rots = np.tile([1.0, 0.0, 0.0, 0.0], (skeleton.num_joints, 1))
        rots[shoulder] = axis_angle([0, 0, 1], np.pi / 2)
        posed = skin_avatar(avatar, Pose(np.zeros(3), rots))

        hand = skeleton.index_of("left_hand")
        rest_hand = skeleton.rest_positions[hand]
        hand_splat = int(np.argmin(np.linalg.norm(avatar.means - rest_hand, axis=1)))
        new_hand = joint_positions(forward_kinematics(skeleton, Pose(np.zeros(3), rots)))[hand]
        np.testing.assert_allclose(posed.means[hand_splat], new_hand, atol=1e-9)


if __name__ == "__main__":
    pytest.main([__file__, "-v", "--tb=short"])
