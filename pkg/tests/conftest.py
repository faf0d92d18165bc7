"""
Shared fixtures: small skeletons, hand-built avatars and cameras.
"""

import numpy as np
import pytest

from avatar_model import MAX_WEIGHTS, Avatar, Joint, Skeleton
from splat_renderer import Camera


def make_avatar(skeleton, means, scales, colors, opacities, weights=None, rots=None, avatar_id="test"):
    """Avatar from plain lists; weights is a list of [(joint, weight), ...] per splat."""
    n = len(means)
    weights = weights or [[(0, 1.0)]] * n
    joints = np.zeros((n, MAX_WEIGHTS), dtype=np.int64)
    values = np.zeros((n, MAX_WEIGHTS))
    for i, pairs in enumerate(weights):
        for k, (j, w) in enumerate(pairs):
            joints[i, k] = j
            values[i, k] = w
    if rots is None:
        rots = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    return Avatar(
        id=avatar_id,
        skeleton=skeleton,
        means=np.asarray(means, dtype=float),
        scales=np.asarray(scales, dtype=float),
        rots=np.asarray(rots, dtype=float),
        colors=np.asarray(colors, dtype=float),
        opacities=np.asarray(opacities, dtype=float),
        weight_joints=joints,
        weight_values=values,
    )


@pytest.fixture
def two_joint_skeleton():
    """Root at the origin, one child 1 m above it."""
    return Skeleton((
        Joint("root", None, (0.0, 0.0, 0.0)),
        Joint("child", 0, (0.0, 1.0, 0.0)),
    ))


@pytest.fixture
def chain_skeleton():
    """Unbranched four-joint chain with a raised root."""
    return Skeleton((
        Joint("base", None, (0.0, 0.5, 0.0)),
        Joint("a", 0, (0.0, 0.4, 0.0)),
        Joint("b", 1, (0.3, 0.0, 0.0)),
        Joint("c", 2, (0.0, 0.0, 0.25)),
    ))


@pytest.fixture
def front_camera():
    """64×64 camera 5 m up the z axis looking back at the origin; pixel (32, 32) on the axis."""
    return Camera(
        position=(0.0, 0.0, 5.0),
        orientation=(0.0, 1.0, 0.0, 0.0),
        focal=100.0,
        principal=(32.0, 32.0),
        width=64,
        height=64,
    )


@pytest.fixture
def avatar_document():
    """Minimal valid avatar file content."""
    return {
        "version": 1,
        "id": "doc_avatar",
        "skeleton": {
            "joints": [
                {"name": "root", "parent": None, "offset": [0.0, 0.0, 0.0]},
                {"name": "child", "parent": 0, "offset": [0.0, 1.0, 0.0]},
            ]
        },
        "splats": [
            {
                "mu": [0.0, 0.5, 0.0],
                "scale": [0.1, 0.2, 0.1],
                "rot": [1.0, 0.0, 0.0, 0.0],
                "color": [0.8, 0.2, 0.1],
                "opacity": 0.9,
                "weights": [[0, 0.25], [1, 0.75]],
            },
            {
                "mu": [0.0, 1.2, 0.0],
                "scale": [0.1, 0.1, 0.1],
                "rot": [1.0, 0.0, 0.0, 0.0],
                "color": [0.1, 0.3, 0.9],
                "opacity": 0.5,
                "weights": [[1, 1.0]],
            },
        ],
    }


@pytest.fixture
def grid_avatar(two_joint_skeleton):
    """Ten small, well separated splats on a 5×2 grid around the origin, bound to the root."""
    rng = np.random.default_rng(11)
    means = [(x, y, 0.0) for y in (-0.25, 0.25) for x in (-0.8, -0.4, 0.0, 0.4, 0.8)]
    n = len(means)
    return make_avatar(
        two_joint_skeleton,
        means=means,
        scales=[(0.08, 0.08, 0.08)] * n,
        colors=rng.uniform(0.1, 0.9, (n, 3)),
        opacities=[0.8] * n,
    )
