"""Ground-truth scene generation and evaluation metrics.

Scenes are built from a planted relative pose: 3-D points visible in both
views project to exact correspondences (plus optional pixel noise),
descriptors are noisy copies of a per-point unit vector, and distractors get
fresh random descriptors. Every mechanism in the pipeline can be validated
against these scenes without any trained weights.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .attention import KeypointSet
from .driver import PipelineConfig, run_pair
from .epipolar import (CameraIntrinsics, EpipolarPose, relative_pose_error,
                       sampson_distances)
from .losses import GroundTruth

# Transport settings for planted unit-vector descriptors. The defaults of the
# pipeline config assume trained descriptor scales; planted descriptors need a
# sharper temperature and a dustbin score below the typical match score.
ORACLE_INV_TEMPERATURE = 10.0
ORACLE_DUSTBIN = -5.0


class SceneGenerationError(RuntimeError):
    """No feasible geometry found within the attempt budget."""


@dataclass(frozen=True)
class SceneParams:
    """Knobs of the scene generator. `inlier_fraction` is jittered +-10% per
    scene and clamped into `inlier_range`."""

    n_keypoints: int = 1024
    inlier_fraction: float = 0.3
    inlier_range: tuple[int, int] = (32, 512)
    rotation_max_deg: float = 30.0
    pixel_noise: float = 0.5
    descriptor_noise: float = 0.1      # expected descriptor perturbation norm
    descriptor_dim: int = 32
    image_size: tuple[int, int] = (640, 480)
    tier: str = "medium"


# Difficulty ladder: rotation bound, pixel noise, inlier fraction, descriptor
# noise. Ordered so every knob gets strictly harder left to right.
TIERS: dict[str, SceneParams] = {
    "easy": SceneParams(rotation_max_deg=10.0, pixel_noise=0.2,
                        inlier_fraction=0.6, descriptor_noise=0.05, tier="easy"),
    "medium": SceneParams(rotation_max_deg=30.0, pixel_noise=0.5,
                          inlier_fraction=0.3, descriptor_noise=0.1, tier="medium"),
    "hard": SceneParams(rotation_max_deg=60.0, pixel_noise=1.0,
                        inlier_fraction=0.15, descriptor_noise=0.45, tier="hard"),
}


@dataclass
class SyntheticScene:
    k1: CameraIntrinsics
    k2: CameraIntrinsics
    rotation: np.ndarray
    translation: np.ndarray
    points: np.ndarray
    kps_x: KeypointSet
    kps_y: KeypointSet
    gt_pairs: np.ndarray
    gt_pose: EpipolarPose
    tier: str
    seed: int

    def ground_truth(self) -> GroundTruth:
        matched_x = set(self.gt_pairs[:, 0].tolist())
        matched_y = set(self.gt_pairs[:, 1].tolist())
        return GroundTruth(
            pairs=self.gt_pairs,
            unmatched_x=np.array(sorted(set(range(self.kps_x.count)) - matched_x)),
            unmatched_y=np.array(sorted(set(range(self.kps_y.count)) - matched_y)),
            pose=self.gt_pose,
            num_x=self.kps_x.count,
            num_y=self.kps_y.count,
        )

    def to_json_dict(self) -> dict:
        def kps(k: KeypointSet) -> dict:
            return {
                "coords": k.coords.tolist(),
                "confidences": k.confidences.tolist(),
                "descriptors": k.descriptors.tolist(),
                "image_size": list(k.image_size),
            }
        return {
            "seed": self.seed,
            "tier": self.tier,
            "intrinsics": {"x": self.k1.to_dict(), "y": self.k2.to_dict()},
            "pose": {"rotation": self.rotation.ravel().tolist(),
                     "translation": self.translation.tolist()},
            "points": self.points.tolist(),
            "keypoints_x": kps(self.kps_x),
            "keypoints_y": kps(self.kps_y),
            "gt_pairs": self.gt_pairs.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, d: dict) -> "SyntheticScene":
        k1 = CameraIntrinsics.from_dict(d["intrinsics"]["x"])
        k2 = CameraIntrinsics.from_dict(d["intrinsics"]["y"])
        r = np.array(d["pose"]["rotation"]).reshape(3, 3)
        t = np.array(d["pose"]["translation"])

        def kps(entry: dict, intr: CameraIntrinsics) -> KeypointSet:
            return KeypointSet(
                coords=np.array(entry["coords"]),
                confidences=np.array(entry["confidences"]),
                descriptors=np.array(entry["descriptors"]),
                intrinsics=intr,
                image_size=tuple(entry["image_size"]),
            )
        return cls(
            k1=k1, k2=k2, rotation=r, translation=t,
            points=np.array(d["points"]).reshape(-1, 3),
            kps_x=kps(d["keypoints_x"], k1),
            kps_y=kps(d["keypoints_y"], k2),
            gt_pairs=np.array(d["gt_pairs"], dtype=int).reshape(-1, 2),
            gt_pose=_pose_from_rt(r, t, k1, k2),
            tier=d["tier"], seed=d["seed"],
        )


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _pose_from_rt(r: np.ndarray, t: np.ndarray, k1: CameraIntrinsics,
                  k2: CameraIntrinsics) -> EpipolarPose:
    e = _skew(t) @ r
    f = np.linalg.inv(k2.K).T @ e @ np.linalg.inv(k1.K)
    return EpipolarPose.from_matrix(f, R=r, t=t)


def _rotation_about(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    k = _skew(axis)
    return np.eye(3) + np.sin(angle_rad) * k + (1 - np.cos(angle_rad)) * (k @ k)


def _look_at(center: np.ndarray, target: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """World-to-camera rotation of a camera at `center` looking at `target`."""
    z = target - center
    z = z / np.linalg.norm(z)
    up = np.array([0.0, 1.0, 0.0]) + rng.normal(0.0, 0.05, 3)
    x = np.cross(up, z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    roll = rng.uniform(-0.05, 0.05)
    rot = _rotation_about(z, roll)
    return np.stack([rot @ x, rot @ y, z])


def _project(k: CameraIntrinsics, pts_cam: np.ndarray) -> np.ndarray:
    return np.column_stack([
        k.fx * pts_cam[:, 0] / pts_cam[:, 2] + k.cx,
        k.fy * pts_cam[:, 1] / pts_cam[:, 2] + k.cy,
    ])


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def _noisy_descriptor(base: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    d = base.shape[1]
    noise = rng.normal(0.0, sigma / np.sqrt(d), size=base.shape)
    return _unit_rows(base + noise)


def generate_scene(params: SceneParams, seed: int,
                   duplicates: tuple[float, int, float] | None = None
                   ) -> SyntheticScene:
    """Deterministic planted scene for the given seed.

    3-D points are sampled in the first camera's frustum and kept only when
    visible in both views; the second camera orbits the point cloud so even
    large rotations retain covisibility. `duplicates`, when given, is
    (fraction, copies, min_epipolar_px): that fraction of inliers gets
    `copies` repeated-texture distractors in the second image, each carrying
    a near-identical descriptor but placed at least min_epipolar_px off the
    true epipolar line.

    Raises SceneGenerationError when no feasible geometry is found in 100
    pose attempts.
    """
    rng = np.random.default_rng(seed)
    w, h = params.image_size
    lo, hi = params.inlier_range
    frac = params.inlier_fraction * (1.0 + rng.uniform(-0.1, 0.1))
    n_inliers = int(np.clip(round(params.n_keypoints * frac), lo, hi))
    n_inliers = min(n_inliers, params.n_keypoints)

    k1 = CameraIntrinsics(fx=rng.uniform(500, 700), fy=rng.uniform(500, 700),
                          cx=w / 2 + rng.uniform(-5, 5), cy=h / 2 + rng.uniform(-5, 5))
    k2 = CameraIntrinsics(fx=rng.uniform(500, 700), fy=rng.uniform(500, 700),
                          cx=w / 2 + rng.uniform(-5, 5), cy=h / 2 + rng.uniform(-5, 5))
    k1_inv = np.linalg.inv(k1.K)

    for _ in range(100):
        target = np.array([0.0, 0.0, 6.0])
        angle = np.radians(rng.uniform(0.3, 1.0) * params.rotation_max_deg)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        c2 = target + _rotation_about(axis, angle) @ (np.zeros(3) - target)
        c2 += rng.normal(0.0, 0.1, 3)
        r2 = _look_at(c2, target, rng)
        t2 = -r2 @ c2
        if np.linalg.norm(t2) < 1e-6:
            continue

        pts, px1, px2 = [], [], []
        attempts = 0
        while len(pts) < n_inliers and attempts < 200 * n_inliers:
            attempts += 1
            z = rng.uniform(4.0, 8.0)
            u = rng.uniform(0.05 * w, 0.95 * w)
            v = rng.uniform(0.05 * h, 0.95 * h)
            p = z * (k1_inv @ np.array([u, v, 1.0]))
            p_cam2 = r2 @ p + t2
            if p_cam2[2] < 0.5:
                continue
            uv2 = _project(k2, p_cam2[None, :])[0]
            if not (0.02 * w <= uv2[0] <= 0.98 * w and 0.02 * h <= uv2[1] <= 0.98 * h):
                continue
            pts.append(p)
            px1.append([u, v])
            px2.append(uv2)
        if len(pts) == n_inliers:
            break
    else:
        raise SceneGenerationError(
            f"no covisible geometry found for seed {seed} after 100 attempts")

    points = np.array(pts)
    px1 = np.array(px1)
    px2 = np.array(px2)
    gt_pose = _pose_from_rt(r2, t2, k1, k2)
    clean = sampson_distances(gt_pose, px1, px2)
    if clean.max() >= 1e-12:
        raise SceneGenerationError(
            f"planted correspondences violate the epipolar constraint "
            f"(max Sampson {clean.max():.3e})")

    base = _unit_rows(rng.normal(size=(n_inliers, params.descriptor_dim)))
    desc_x = _noisy_descriptor(base, params.descriptor_noise, rng)
    desc_y = _noisy_descriptor(base, params.descriptor_noise, rng)

    if params.pixel_noise > 0:
        px1 = px1 + rng.normal(0.0, params.pixel_noise, px1.shape)
        px2 = px2 + rng.normal(0.0, params.pixel_noise, px2.shape)

    n_dis = params.n_keypoints - n_inliers
    dis_x = np.column_stack([rng.uniform(0, w, n_dis), rng.uniform(0, h, n_dis)])
    dis_y = np.column_stack([rng.uniform(0, w, n_dis), rng.uniform(0, h, n_dis)])
    dis_desc_x = _unit_rows(rng.normal(size=(n_dis, params.descriptor_dim)))
    dis_desc_y = _unit_rows(rng.normal(size=(n_dis, params.descriptor_dim)))

    if duplicates is not None and n_dis > 0:
        dup_fraction, copies, min_px = duplicates
        chosen = rng.choice(n_inliers, size=min(
            int(round(dup_fraction * n_inliers)), n_dis // max(copies, 1)), replace=False)
        slot = 0
        for idx in chosen:
            line = gt_pose.F @ np.array([px1[idx, 0], px1[idx, 1], 1.0])
            norm = np.hypot(line[0], line[1])
            for _ in range(copies):
                for _ in range(1000):
                    cand = np.array([rng.uniform(0, w), rng.uniform(0, h)])
                    dist = abs(line @ np.array([cand[0], cand[1], 1.0])) / norm
                    if dist >= min_px:
                        break
                dis_y[slot] = cand
                dis_desc_y[slot] = _unit_rows(
                    (desc_y[idx] + rng.normal(0.0, 0.02 / np.sqrt(params.descriptor_dim),
                                              params.descriptor_dim))[None, :])[0]
                slot += 1

    coords_x = np.vstack([px1, dis_x])
    coords_y = np.vstack([px2, dis_y])
    all_desc_x = np.vstack([desc_x, dis_desc_x])
    all_desc_y = np.vstack([desc_y, dis_desc_y])
    conf_x = rng.uniform(0.3, 1.0, params.n_keypoints)
    conf_y = rng.uniform(0.3, 1.0, params.n_keypoints)

    perm_x = rng.permutation(params.n_keypoints)
    perm_y = rng.permutation(params.n_keypoints)
    inv_x = np.argsort(perm_x)
    inv_y = np.argsort(perm_y)
    gt_pairs = np.column_stack([inv_x[:n_inliers], inv_y[:n_inliers]])

    kps_x = KeypointSet(coords_x[perm_x], conf_x, all_desc_x[perm_x],
                        intrinsics=k1, image_size=params.image_size)
    kps_y = KeypointSet(coords_y[perm_y], conf_y, all_desc_y[perm_y],
                        intrinsics=k2, image_size=params.image_size)
    return SyntheticScene(
        k1=k1, k2=k2, rotation=r2, translation=t2, points=points,
        kps_x=kps_x, kps_y=kps_y, gt_pairs=gt_pairs, gt_pose=gt_pose,
        tier=params.tier, seed=seed,
    )


def generate_repeated_texture_scene(params: SceneParams, seed: int,
                                    duplicate_fraction: float = 0.6,
                                    copies: int = 2,
                                    min_epipolar_px: float = 40.0) -> SyntheticScene:
    """Adversarial scene: a fraction of inliers gets near-duplicate descriptors
    planted off the epipolar line in the second image."""
    return generate_scene(params, seed,
                          duplicates=(duplicate_fraction, copies, min_epipolar_px))


def synthetic_pipeline_config(**overrides) -> PipelineConfig:
    """PipelineConfig tuned for planted unit-vector descriptors."""
    base = dict(inv_temperature=ORACLE_INV_TEMPERATURE, dustbin_score=ORACLE_DUSTBIN,
                ransac_iterations=256)
    base.update(overrides)
    return PipelineConfig(**base)


def auc_exact(errors, thresholds) -> list[float]:
    """Exact area under the cumulative recall curve up to each threshold.

    recall(e) is the step function of sorted errors; its integral over
    [0, tau] is sum(max(0, tau - e_i)) / N, no trapezoid approximation.
    Failures enter as +inf and count against every threshold.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("empty error list")
    if np.any(np.isnan(errors)) or np.any(errors < 0):
        raise ValueError("errors must be nonnegative (use +inf for failures)")
    out = []
    for tau in thresholds:
        contrib = np.clip(tau - errors, 0.0, None)
        out.append(float(contrib.sum() / (len(errors) * tau)))
    return out


class MatchMetrics(NamedTuple):
    matching_score: float
    precision: float
    predicted_empty: bool


def match_metrics(predicted, gt_pairs: np.ndarray, num_x: int, num_y: int) -> MatchMetrics:
    """Matching score (correct / min keypoint count) and precision
    (correct / predicted); an empty prediction scores precision 1.0, flagged."""
    pred = {(int(m[0]), int(m[1])) for m in predicted}
    gt = {(int(i), int(j)) for i, j in np.asarray(gt_pairs).reshape(-1, 2)}
    correct = len(pred & gt)
    if len(pred) == 0:
        return MatchMetrics(0.0, 1.0, True)
    return MatchMetrics(correct / min(num_x, num_y), correct / len(pred), False)


@dataclass
class EvalReport:
    """Benchmark output. `rows` has one entry per (scene, config); aggregates
    and retention curves are derived from them. Timing lives outside the
    serialized payload so reports are byte-reproducible."""

    rows: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    retention: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    CSV_COLUMNS = ("seed", "tier", "config", "rot_err", "trans_err",
                   "n_matches", "precision", "iters")

    def to_json(self) -> str:
        payload = {"rows": self.rows, "aggregates": self.aggregates,
                   "retention": self.retention}
        return json.dumps(payload, sort_keys=True, indent=2)

    def to_csv(self) -> str:
        lines = [",".join(self.CSV_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(repr(float(row[c])) if isinstance(row[c], float)
                                  else str(row[c]) for c in self.CSV_COLUMNS))
        return "\n".join(lines) + "\n"


def _keypoints_of(matches) -> tuple[set, set]:
    return {int(m[0]) for m in matches}, {int(m[1]) for m in matches}


def run_scene(scene: SyntheticScene, configs: dict[str, PipelineConfig],
              scene_index: int, batch_seed: int,
              reference: str | None = None) -> dict:
    """All configs on one scene, reduced to a JSON-serializable payload:
    one metrics row per config, per-iteration retention fractions against the
    reference config's final-match keypoints, and per-iteration timings."""
    if reference is None:
        reference = next((n for n, c in configs.items() if c.pooling == "off"), None)

    t_max = max(c.t_max for c in configs.values())
    runs = {}
    for ci, (name, cfg) in enumerate(configs.items()):
        seed = int(np.random.SeedSequence([batch_seed, scene_index, ci]).generate_state(1)[0])
        cfg_run = replace(cfg, seed=seed)
        matches, pose, trace = run_pair(scene.kps_x, scene.kps_y, None, cfg_run)
        if pose is not None and len(matches) >= 1:
            mx = scene.kps_x.coords[[m.i for m in matches]]
            my = scene.kps_y.coords[[m.j for m in matches]]
            rot_err, trans_err = relative_pose_error(
                pose, scene.rotation, scene.translation, mx, my, scene.k1, scene.k2)
        else:
            rot_err, trans_err = float("inf"), float("inf")
        metrics = match_metrics(matches, scene.gt_pairs,
                                scene.kps_x.count, scene.kps_y.count)
        runs[name] = (matches, trace, {
            "seed": scene.seed, "tier": scene.tier, "config": name,
            "rot_err": rot_err, "trans_err": trans_err,
            "n_matches": len(matches), "precision": metrics.precision,
            "iters": trace.total_iters,
            "matching_score": metrics.matching_score,
        })

    ref_x, ref_y = (None, None)
    if reference is not None and reference in runs and runs[reference][0]:
        ref_x, ref_y = _keypoints_of(runs[reference][0])

    payload = {"index": scene_index, "rows": [], "retention": {}, "timing": {}}
    for name, cfg in configs.items():
        matches, trace, row = runs[name]
        payload["rows"].append(row)
        payload["timing"][name] = [
            [rec.t, rec.ms] for rec in trace.records]
        if cfg.pooling != "off" and ref_x:
            fracs = []
            for t in range(1, t_max + 1):
                rec = trace.records[min(t, len(trace.records)) - 1]
                kx = set(rec.active_x.tolist())
                ky = set(rec.active_y.tolist())
                fracs.append(0.5 * (len(kx & ref_x) / len(ref_x)
                                    + len(ky & ref_y) / len(ref_y)))
            payload["retention"][name] = fracs
    return payload


def assemble_report(payloads: list[dict], configs: dict[str, PipelineConfig],
                    reference: str | None = None) -> EvalReport:
    """Aggregate per-scene payloads (sorted by scene index) into a report."""
    if reference is None:
        reference = next((n for n, c in configs.items() if c.pooling == "off"), None)
    t_max = max((c.t_max for c in configs.values()), default=0)

    report = EvalReport()
    retention_acc = {n: [[] for _ in range(t_max)] for n, c in configs.items()
                     if c.pooling != "off"}
    timing_acc: dict[str, list[list[float]]] = {n: [[] for _ in range(t_max)]
                                                for n in configs}
    for payload in sorted(payloads, key=lambda p: p["index"]):
        report.rows.extend(payload["rows"])
        for name, pairs in payload["timing"].items():
            for t, ms in pairs:
                timing_acc[name][int(t) - 1].append(ms)
        for name, fracs in payload["retention"].items():
            for t, frac in enumerate(fracs):
                retention_acc[name][t].append(frac)

    tiers = sorted({r["tier"] for r in report.rows})
    for name in configs:
        report.aggregates[name] = {}
        for tier in tiers:
            rows = [r for r in report.rows if r["config"] == name and r["tier"] == tier]
            if not rows:
                continue
            errs = [max(r["rot_err"], r["trans_err"]) for r in rows]
            auc = auc_exact(errs, [5.0, 10.0, 20.0])
            hist: dict[str, int] = {}
            for r in rows:
                hist[str(r["iters"])] = hist.get(str(r["iters"]), 0) + 1
            report.aggregates[name][tier] = {
                "n_pairs": len(rows),
                "auc": {"5": auc[0], "10": auc[1], "20": auc[2]},
                "mean_matching_score": float(np.mean([r["matching_score"] for r in rows])),
                "mean_precision": float(np.mean([r["precision"] for r in rows])),
                "mean_iters": float(np.mean([r["iters"] for r in rows])),
                "iteration_histogram": hist,
            }

    report.retention = {
        name: [float(np.mean(v)) if v else None for v in acc]
        for name, acc in retention_acc.items()
    }
    if reference is not None and reference in configs:
        report.retention[reference] = [1.0] * t_max
    report.timing = {
        name: [float(np.mean(v)) if v else None for v in acc]
        for name, acc in timing_acc.items()
    }
    return report


def run_benchmark(scenes: list[SyntheticScene], configs: dict[str, PipelineConfig],
                  jobs: int = 1, seed: int = 0,
                  reference: str | None = None) -> EvalReport:
    """Run every config over every scene and aggregate the metrics.

    `reference` names the config whose final-match keypoints define the
    retention baseline (defaults to the first config with pooling "off").
    Results are deterministic for a fixed seed regardless of `jobs`: per-run
    seeds derive from (seed, scene index, config index) and rows are emitted
    in scene-major order.
    """
    def task(i: int) -> dict:
        return run_scene(scenes[i], configs, i, seed, reference)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            payloads = list(pool.map(task, range(len(scenes))))
    else:
        payloads = [task(i) for i in range(len(scenes))]
    return assemble_report(payloads, configs, reference)
