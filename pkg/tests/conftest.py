from dataclasses import replace

import numpy as np
import pytest

from itermatch.epipolar import CameraIntrinsics
from itermatch.synthbench import TIERS, SceneParams, generate_scene


@pytest.fixture(scope="session")
def small_scene():
    """Noiseless planted scene, small enough for exhaustive checks."""
    params = SceneParams(n_keypoints=60, inlier_fraction=0.5, rotation_max_deg=15.0,
                         pixel_noise=0.0, descriptor_noise=0.0, descriptor_dim=16,
                         tier="easy")
    return generate_scene(params, seed=11)


@pytest.fixture(scope="session")
def medium_scene():
    return generate_scene(replace(TIERS["medium"], n_keypoints=256), seed=21)


def planted_pose(seed=0, n_points=50, noise=0.0):
    """Exact correspondences from a random two-view geometry; returns
    (xs, ys, R, t, K1, K2, F-pose)."""
    params = SceneParams(n_keypoints=n_points, inlier_fraction=1.0,
                         inlier_range=(n_points, n_points),
                         rotation_max_deg=25.0, pixel_noise=noise,
                         descriptor_noise=0.0, descriptor_dim=8, tier="easy")
    scene = generate_scene(params, seed=seed)
    xs = scene.kps_x.coords[scene.gt_pairs[:, 0]]
    ys = scene.kps_y.coords[scene.gt_pairs[:, 1]]
    return xs, ys, scene.rotation, scene.translation, scene.k1, scene.k2, scene.gt_pose


@pytest.fixture
def identity_intrinsics():
    return CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0)


def rotation_about_z(deg):
    a = np.radians(deg)
    return np.array([
        [np.cos(a), -np.sin(a), 0.0],
        [np.sin(a), np.cos(a), 0.0],
        [0.0, 0.0, 1.0],
    ])
