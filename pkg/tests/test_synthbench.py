import json
from dataclasses import replace

import numpy as np
import pytest

from itermatch.epipolar import sampson_distances
from itermatch.synthbench import (TIERS, EvalReport, SceneParams, SyntheticScene,
                                  auc_exact, generate_repeated_texture_scene,
                                  generate_scene, match_metrics, run_benchmark,
                                  synthetic_pipeline_config)
from itermatch.transport import pairwise_distance


class TestGenerateScene:
    def test_noiseless_nearest_neighbor_recovers_all_pairs(self):
        params = SceneParams(n_keypoints=80, inlier_fraction=1.0, inlier_range=(80, 80),
                             pixel_noise=0.0, descriptor_noise=0.0, descriptor_dim=16)
        scene = generate_scene(params, seed=0)
        d = pairwise_distance(scene.kps_x.descriptors, scene.kps_y.descriptors)
        nn = d.argmin(axis=1)
        recovered = {(i, int(nn[i])) for i in range(scene.kps_x.count)}
        assert recovered == {(int(i), int(j)) for i, j in scene.gt_pairs}

    def test_default_inlier_fraction(self):
        fracs = []
        for s in range(100):
            scene = generate_scene(SceneParams(n_keypoints=256), seed=s)
            fracs.append(len(scene.gt_pairs) / scene.kps_x.count)
        assert np.mean(fracs) == pytest.approx(0.30, abs=0.02)

    def test_same_seed_same_serialization(self):
        a = generate_scene(TIERS["easy"], seed=33)
        b = generate_scene(TIERS["easy"], seed=33)
        assert a.to_json() == b.to_json()

    def test_gt_pairs_satisfy_epipolar_constraint_when_noiseless(self):
        params = replace(TIERS["easy"], pixel_noise=0.0, n_keypoints=128)
        scene = generate_scene(params, seed=1)
        xs = scene.kps_x.coords[scene.gt_pairs[:, 0]]
        ys = scene.kps_y.coords[scene.gt_pairs[:, 1]]
        assert sampson_distances(scene.gt_pose, xs, ys).max() < 1e-12

    def test_inlier_count_respects_range(self):
        params = SceneParams(n_keypoints=64, inlier_fraction=0.01, inlier_range=(32, 512))
        scene = generate_scene(params, seed=2)
        assert len(scene.gt_pairs) == 32

    def test_json_round_trip(self):
        scene = generate_scene(replace(TIERS["medium"], n_keypoints=48,
                                       descriptor_dim=8), seed=3)
        back = SyntheticScene.from_json_dict(json.loads(scene.to_json()))
        np.testing.assert_allclose(back.kps_x.coords, scene.kps_x.coords)
        np.testing.assert_allclose(back.kps_y.descriptors, scene.kps_y.descriptors)
        np.testing.assert_array_equal(back.gt_pairs, scene.gt_pairs)
        np.testing.assert_allclose(back.gt_pose.F, scene.gt_pose.F, atol=1e-12)
        assert back.tier == scene.tier and back.seed == scene.seed

    def test_ground_truth_partition(self):
        scene = generate_scene(replace(TIERS["medium"], n_keypoints=64), seed=4)
        gt = scene.ground_truth()
        assert len(gt.pairs) + len(gt.unmatched_x) == scene.kps_x.count
        assert len(gt.pairs) + len(gt.unmatched_y) == scene.kps_y.count

    def test_repeated_texture_duplicates_sit_off_the_epipolar_line(self):
        params = replace(TIERS["medium"], n_keypoints=120, inlier_fraction=0.4)
        scene = generate_repeated_texture_scene(params, seed=5, min_epipolar_px=40.0)
        gt_y = set(scene.gt_pairs[:, 1].tolist())
        dup_rows = []
        for j in range(scene.kps_y.count):
            if j in gt_y:
                continue
            d = np.linalg.norm(scene.kps_y.descriptors[j]
                               - scene.kps_y.descriptors[list(gt_y)], axis=1)
            if d.min() < 0.1:
                dup_rows.append((int(np.array(list(gt_y))[d.argmin()]), j))
        assert dup_rows, "expected planted duplicates"
        for true_j, dup_j in dup_rows:
            i = scene.gt_pairs[scene.gt_pairs[:, 1] == true_j][0, 0]
            s = sampson_distances(scene.gt_pose,
                                  scene.kps_x.coords[i][None, :],
                                  scene.kps_y.coords[dup_j][None, :])[0]
            assert s > 12.0 ** 2


class TestAucExact:
    def test_all_zero_errors(self):
        assert auc_exact([0.0, 0.0], [5.0, 10.0, 20.0]) == [1.0, 1.0, 1.0]

    def test_all_failures(self):
        assert auc_exact([np.inf, np.inf], [5.0, 10.0]) == [0.0, 0.0]

    def test_singleton_hand_case(self):
        assert auc_exact([2.5], [5.0])[0] == pytest.approx(0.5, abs=1e-12)

    def test_monotone_under_error_improvement(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            errs = rng.uniform(0.0, 30.0, size=12)
            base = auc_exact(errs, [5.0, 10.0, 20.0])
            k = rng.integers(0, 12)
            improved = errs.copy()
            improved[k] *= rng.uniform(0.0, 1.0)
            better = auc_exact(improved, [5.0, 10.0, 20.0])
            assert all(b >= a - 1e-15 for a, b in zip(base, better))

    def test_threshold_ordering(self):
        rng = np.random.default_rng(1)
        errs = rng.uniform(0.0, 40.0, size=20)
        a5, a10, a20 = auc_exact(errs, [5.0, 10.0, 20.0])
        assert a5 <= a10 <= a20

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            auc_exact([], [5.0])
        with pytest.raises(ValueError):
            auc_exact([-1.0], [5.0])


class TestMatchMetrics:
    def test_perfect_prediction(self):
        gt = np.array([[0, 1], [1, 0], [2, 2]])
        m = match_metrics([(0, 1), (1, 0), (2, 2)], gt, 4, 5)
        assert m.precision == 1.0
        assert m.matching_score == pytest.approx(3 / 4)
        assert not m.predicted_empty

    def test_empty_prediction_convention(self):
        m = match_metrics([], np.array([[0, 0]]), 4, 4)
        assert m.precision == 1.0
        assert m.matching_score == 0.0
        assert m.predicted_empty

    def test_half_correct(self):
        gt = np.array([[i, i] for i in range(4)])
        pred = [(0, 0), (1, 1), (2, 3), (3, 2)]
        m = match_metrics(pred, gt, 8, 8)
        assert m.precision == 0.5
        assert m.matching_score == pytest.approx(2 / 8)


class TestRunBenchmark:
    def _scenes(self):
        params = replace(TIERS["medium"], n_keypoints=96, descriptor_dim=16)
        return [generate_scene(params, seed=100 + i) for i in range(4)]

    def _configs(self):
        return {
            "imp": synthetic_pipeline_config(pooling="off", t_max=4,
                                             ransac_iterations=64),
            "eimp": synthetic_pipeline_config(pooling="adaptive", t_max=4,
                                              ransac_iterations=64,
                                              keypoint_floor=16),
        }

    def test_deterministic_and_jobs_invariant(self):
        scenes = self._scenes()
        a = run_benchmark(scenes, self._configs(), jobs=1, seed=9)
        b = run_benchmark(scenes, self._configs(), jobs=4, seed=9)
        assert a.to_json() == b.to_json()
        assert a.to_csv() == b.to_csv()

    def test_report_shape(self):
        scenes = self._scenes()
        rep = run_benchmark(scenes, self._configs(), seed=9)
        assert len(rep.rows) == len(scenes) * 2
        assert set(rep.aggregates) == {"imp", "eimp"}
        agg = rep.aggregates["imp"]["medium"]
        assert set(agg["auc"]) == {"5", "10", "20"}
        assert 0.0 <= agg["auc"]["5"] <= agg["auc"]["20"] <= 1.0
        assert "eimp" in rep.retention
        assert len(rep.retention["eimp"]) == 4
        header = rep.to_csv().splitlines()[0]
        assert header == "seed,tier,config,rot_err,trans_err,n_matches,precision,iters"
        assert rep.timing["imp"][0] > 0

    def test_csv_rows_recompute_auc(self):
        scenes = self._scenes()
        rep = run_benchmark(scenes, self._configs(), seed=9)
        lines = rep.to_csv().strip().splitlines()[1:]
        errs = [max(float(parts[3]), float(parts[4]))
                for parts in (line.split(",") for line in lines)
                if parts[2] == "imp"]
        recomputed = auc_exact(errs, [5.0])[0]
        assert recomputed == pytest.approx(rep.aggregates["imp"]["medium"]["auc"]["5"])


def test_eval_report_json_excludes_timing():
    rep = EvalReport(rows=[], aggregates={}, retention={}, timing={"a": [1.0]})
    assert "timing" not in json.loads(rep.to_json())
