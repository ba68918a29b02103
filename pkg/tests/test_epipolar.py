import numpy as np
import pytest

from itermatch.epipolar import (CameraIntrinsics, CheiralityTieError,
                                DegenerateConfigurationError, EpipolarPose,
                                InsufficientMatchesError, decompose_essential,
                                essential_from_fundamental, normalize_fundamental,
                                pose_error, ransac_fundamental, sampson_distance,
                                sampson_distances, weighted_eight_point)
from itermatch.numerics import svd3
from conftest import planted_pose, rotation_about_z
from oracles import sampson_by_formula

# Pure-translation pose along x: epipolar lines are horizontal.
F_TRANS_X = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def _skew(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0.0]])


class TestSampson:
    def test_point_on_epipolar_line(self):
        assert sampson_distance(F_TRANS_X, (0.3, 0.5), (0.9, 0.5)) == 0.0

    def test_hand_case(self):
        # numerator (0.1)^2 = 0.01, denominator 2
        assert sampson_distance(F_TRANS_X, (0.3, 0.5), (0.9, 0.6)) == pytest.approx(0.005, abs=1e-15)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            f = rng.normal(size=(3, 3))
            x = rng.uniform(0, 100, 2)
            y = rng.uniform(0, 100, 2)
            assert sampson_distance(f, x, y) == pytest.approx(
                sampson_by_formula(f, x, y), rel=1e-12)

    def test_planted_correspondences_are_exact(self):
        xs, ys, *_, pose = planted_pose(seed=1)
        assert sampson_distances(pose, xs, ys).max() < 1e-18

    def test_transpose_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            f = rng.normal(size=(3, 3))
            x = rng.uniform(-5, 5, 2)
            y = rng.uniform(-5, 5, 2)
            assert sampson_distance(f, x, y) == pytest.approx(
                sampson_distance(f.T, y, x), rel=1e-12)

    def test_degenerate_denominator_is_inf(self):
        # F maps both points into its null space: all four denominator terms vanish.
        f = np.diag([0.0, 0.0, 1.0])
        assert sampson_distance(f, (0.0, 0.0), (0.0, 0.0)) == np.inf


class TestWeightedEightPoint:
    def test_recovers_planted_pose(self):
        xs, ys, *_, pose = planted_pose(seed=3, n_points=20)
        est = weighted_eight_point(xs, ys)
        assert sampson_distances(est, xs, ys).max() < 1e-9

    def test_insufficient_matches(self):
        xs, ys, *_ = planted_pose(seed=3, n_points=20)
        with pytest.raises(InsufficientMatchesError):
            weighted_eight_point(xs[:7], ys[:7])

    def test_zero_weight_rows_contribute_nothing(self):
        xs, ys, *_ = planted_pose(seed=4, n_points=20)
        rng = np.random.default_rng(4)
        gross_x = rng.uniform(0, 640, (10, 2))
        gross_y = rng.uniform(0, 480, (10, 2))
        w = np.concatenate([np.ones(20), np.zeros(10)])
        with_outliers = weighted_eight_point(
            np.vstack([xs, gross_x]), np.vstack([ys, gross_y]), w)
        clean = weighted_eight_point(xs, ys)
        assert np.max(np.abs(with_outliers.F - clean.F)) < 1e-9

    def test_weight_rescaling_invariance(self):
        xs, ys, *_ = planted_pose(seed=5, n_points=30, noise=0.5)
        rng = np.random.default_rng(5)
        w = rng.uniform(0.2, 1.0, 30)
        a = weighted_eight_point(xs, ys, w)
        b = weighted_eight_point(xs, ys, w * 37.5)
        assert np.max(np.abs(a.F - b.F)) < 1e-10

    def test_similarity_transform_invariance(self):
        xs, ys, *_ = planted_pose(seed=6, n_points=25)
        ang = np.radians(30)
        rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        xs2 = 2.5 * xs @ rot.T + [100.0, -40.0]
        ys2 = 0.5 * ys @ rot.T + [-3.0, 77.0]
        est = weighted_eight_point(xs2, ys2)
        assert sampson_distances(est, xs2, ys2).max() < 1e-9

    def test_coplanar_points_detected_as_degenerate(self):
        # Points on a plane admit a 3-parameter family of compatible F.
        rng = np.random.default_rng(7)
        k = CameraIntrinsics(600, 600, 320, 240)
        r = rotation_about_z(10.0)
        t = np.array([1.0, 0.2, 0.1])
        pts = np.column_stack([rng.uniform(-2, 2, 30), rng.uniform(-2, 2, 30),
                               np.full(30, 5.0)])
        p2 = pts @ r.T + t
        xs = (pts / pts[:, 2:] @ k.K.T)[:, :2]
        ys = (p2 / p2[:, 2:] @ k.K.T)[:, :2]
        with pytest.raises(DegenerateConfigurationError):
            weighted_eight_point(xs, ys)


class TestEssential:
    def test_identity_intrinsics(self, identity_intrinsics):
        rng = np.random.default_rng(8)
        f = EpipolarPose.from_matrix(rng.normal(size=(3, 3)))
        e = essential_from_fundamental(f, identity_intrinsics, identity_intrinsics)
        u, s, v = svd3(f.F)
        mean = 0.5 * (s[0] + s[1])
        expected = normalize_fundamental((u * [mean, mean, 0.0]) @ v.T,
                                         rank2_project=False)
        np.testing.assert_allclose(e, expected, atol=1e-12)

    def test_planted_scene_recovers_txr(self):
        xs, ys, r, t, k1, k2, pose = planted_pose(seed=9)
        est = weighted_eight_point(xs, ys)
        e = essential_from_fundamental(est, k1, k2)
        expected = normalize_fundamental(_skew(t / np.linalg.norm(t)) @ r,
                                         rank2_project=False)
        assert np.max(np.abs(e - expected)) < 1e-8

    def test_swapping_intrinsics_changes_result(self):
        xs, ys, r, t, k1, k2, pose = planted_pose(seed=10)
        a = essential_from_fundamental(pose, k1, k2)
        b = essential_from_fundamental(pose, k2, k1)
        assert np.max(np.abs(a - b)) > 1e-6


class TestDecomposeEssential:
    def test_planted_scene_recovery(self):
        xs, ys, r, t, k1, k2, _ = planted_pose(seed=11)
        e = essential_from_fundamental(weighted_eight_point(xs, ys), k1, k2)
        r_est, t_est = decompose_essential(e, xs, ys, k1, k2)
        err = pose_error((r, t / np.linalg.norm(t)), (r_est, t_est))
        assert err < 1e-6

    def test_single_correspondence_still_decides(self):
        xs, ys, r, t, k1, k2, _ = planted_pose(seed=12)
        e = essential_from_fundamental(weighted_eight_point(xs, ys), k1, k2)
        r_est, t_est = decompose_essential(e, xs[:1], ys[:1], k1, k2)
        assert r_est.shape == (3, 3)
        assert np.linalg.norm(t_est) == pytest.approx(1.0)

    def test_mirrored_scene_forces_tie(self):
        # Half the points in front of both cameras, half mirrored through both
        # camera centers: the vote splits between (R, t) and (R, -t).
        xs, ys, r, t, k1, k2, pose = planted_pose(seed=13, n_points=20)
        k1_inv = np.linalg.inv(k1.K)
        mx, my = [], []
        for u, v in xs:
            p = -5.0 * (k1_inv @ [u, v, 1.0])
            q = r @ p + t
            if q[2] < -0.1:
                mx.append([u, v])
                my.append([k2.fx * q[0] / q[2] + k2.cx, k2.fy * q[1] / q[2] + k2.cy])
        assert len(mx) >= 2, "mirror construction needs a few behind-both points"
        n = min(len(mx), len(xs))
        both_x = np.vstack([xs[:n], np.array(mx)[:n]])
        both_y = np.vstack([ys[:n], np.array(my)[:n]])
        e = essential_from_fundamental(pose, k1, k2)
        with pytest.raises(CheiralityTieError):
            decompose_essential(e, both_x, both_y, k1, k2)


class TestPoseError:
    def test_identical_poses(self):
        r = rotation_about_z(33.0)
        t = np.array([1.0, 2.0, 3.0]) / np.sqrt(14)
        assert pose_error((r, t), (r, t)) == 0.0

    def test_known_rotation_angle(self):
        t = np.array([0.0, 0.0, 1.0])
        err = pose_error((np.eye(3), t), (rotation_about_z(10.0), t))
        assert err == pytest.approx(10.0, abs=1e-9)

    def test_translation_sign_invariance(self):
        r = np.eye(3)
        t = np.array([1.0, 0.0, 0.0])
        assert pose_error((r, t), (r, -t)) == pytest.approx(0.0, abs=1e-9)

    def test_pseudometric(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            ra = rotation_about_z(rng.uniform(0, 90))
            rb = rotation_about_z(rng.uniform(0, 90))
            ta = rng.normal(size=3)
            ta /= np.linalg.norm(ta)
            tb = rng.normal(size=3)
            tb /= np.linalg.norm(tb)
            ab = pose_error((ra, ta), (rb, tb))
            ba = pose_error((rb, tb), (ra, ta))
            assert ab >= 0
            assert ab == pytest.approx(ba, abs=1e-9)


class TestRansac:
    def _contaminated(self, seed):
        xs, ys, *_ , pose = planted_pose(seed=seed, n_points=100, noise=0.5)
        rng = np.random.default_rng(seed + 1000)
        out_x = rng.uniform(0, 640, (100, 2))
        out_y = rng.uniform(0, 480, (100, 2))
        all_x = np.vstack([xs, out_x])
        all_y = np.vstack([ys, out_y])
        return all_x, all_y, pose

    def test_recall_on_contaminated_set(self):
        all_x, all_y, _ = self._contaminated(15)
        result = ransac_fundamental(all_x, all_y, iterations=1000,
                                    inlier_threshold_px=3.0, seed=0)
        assert result is not None
        _, mask = result
        assert mask[:100].mean() >= 0.95

    def test_all_outliers_give_no_pose(self):
        rng = np.random.default_rng(16)
        xs = rng.uniform(0, 640, (40, 2))
        ys = rng.uniform(0, 480, (40, 2))
        # Uniform pairs rarely admit 8 mutually consistent matches at 0.5 px.
        assert ransac_fundamental(xs, ys, iterations=50,
                                  inlier_threshold_px=0.5, seed=1) is None

    def test_seed_determinism(self):
        all_x, all_y, _ = self._contaminated(17)
        a = ransac_fundamental(all_x, all_y, iterations=300, seed=7)
        b = ransac_fundamental(all_x, all_y, iterations=300, seed=7)
        assert a is not None and b is not None
        np.testing.assert_array_equal(a[1], b[1])
        np.testing.assert_array_equal(a[0].F, b[0].F)

    def test_exactly_eight_matches(self):
        xs, ys, *_ = planted_pose(seed=18, n_points=8)
        result = ransac_fundamental(xs, ys, iterations=10, seed=0)
        assert result is not None
        assert result[1].all()


class TestNormalization:
    def test_rank2_projection_is_closest_rank2(self):
        rng = np.random.default_rng(19)
        for _ in range(50):
            m = rng.normal(size=(3, 3))
            u, s, v = svd3(m)
            proj = (u * [s[0], s[1], 0.0]) @ v.T
            dist = np.linalg.norm(m - proj)
            assert dist == pytest.approx(s[2], rel=1e-9)
            for _ in range(20):
                b = rng.normal(size=(3, 2)) @ rng.normal(size=(2, 3))
                assert dist <= np.linalg.norm(m - b) + 1e-12

    def test_pose_invariants(self):
        rng = np.random.default_rng(20)
        pose = EpipolarPose.from_matrix(rng.normal(size=(3, 3)))
        assert np.linalg.norm(pose.F) == pytest.approx(1.0, abs=1e-12)
        assert svd3(pose.F)[1][2] < 1e-9
        flat = pose.F.ravel()
        assert flat[np.argmax(np.abs(flat))] > 0
