"""The iterative matching loop: per-iteration augmentation, transport matching,
RANSAC pose estimation, the convergence stop criterion, adaptive keypoint
sampling, and the final pose-guided match rescue."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import attention as attn
from .epipolar import (CameraIntrinsics, CheiralityTieError, EpipolarPose, ScoredMatch,
                       decompose_essential, essential_from_fundamental, pose_error,
                       ransac_fundamental, sampson_distance_matrix)
from .numerics import WeightStore
from .pooling import (KEYPOINT_FLOOR, adaptive_sample, keypoint_contribution_scores,
                      pose_uncertainty, r50_sample)
from .transport import MatchMatrix, extract_matches, pairwise_distance, sinkhorn

POOLING_MODES = ("off", "adaptive", "r50")


@dataclass
class PipelineConfig:
    """All pipeline knobs. The defaults are the operating point the model was
    designed around: 9 iteration blocks, match threshold 0.2, pose-convergence
    threshold 1.5 degrees, epipolar-consistency threshold 0.005, 10 Sinkhorn
    iterations, and a 12 px epipolar rescue mask."""

    t_max: int = 9
    theta_match: float = 0.2
    theta_pose_deg: float = 1.5
    theta_epipolar: float = 0.005
    sinkhorn_iterations: int = 10
    pooling: str = "off"                 # off | adaptive | r50
    ransac_iterations: int = 1000
    ransac_threshold_px: float = 3.0
    rescue_threshold_px: float = 12.0
    rescue_threshold_factor: float = 0.5
    dustbin_score: float = 1.0
    inv_temperature: float = 1.0
    mutual_matches: bool = True
    early_stop: bool = True
    keypoint_floor: int = KEYPOINT_FLOOR
    seed: int = 0

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        for name in ("theta_match", "theta_pose_deg", "theta_epipolar",
                     "rescue_threshold_px", "ransac_threshold_px"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class IterationRecord:
    t: int
    kept_x: int
    kept_y: int
    n_matches: int
    pose: EpipolarPose | None
    pose_delta_deg: float | None
    r: float
    stopped: bool
    ms: float
    # In-memory extras for the benchmark harness (not serialized).
    active_x: np.ndarray | None = None
    active_y: np.ndarray | None = None
    matches: list[ScoredMatch] = field(default_factory=list)


@dataclass
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    rescued: int = 0
    total_iters: int = 0
    final_pose: EpipolarPose | None = None
    config: dict = field(default_factory=dict)

    def to_json_dict(self, include_timing: bool = True) -> dict:
        """Documented trace schema. Timing can be excluded because wall-clock
        is the one field that varies between otherwise identical runs."""
        rows = []
        for rec in self.records:
            row = {
                "t": rec.t,
                "kept_x": rec.kept_x,
                "kept_y": rec.kept_y,
                "n_matches": rec.n_matches,
                "pose": None if rec.pose is None else [float(v) for v in rec.pose.F.ravel()],
                "pose_delta_deg": None if rec.pose_delta_deg is None else float(rec.pose_delta_deg),
                "r": float(rec.r),
                "stopped": bool(rec.stopped),
            }
            if include_timing:
                row["ms"] = float(rec.ms)
            rows.append(row)
        return {
            "iteration": rows,
            "rescued": int(self.rescued),
            "total_iters": int(self.total_iters),
            "final_pose": None if self.final_pose is None
                          else [float(v) for v in self.final_pose.F.ravel()],
            "config": self.config,
        }


def _decompose(pose: EpipolarPose, xs: np.ndarray, ys: np.ndarray,
               k1: CameraIntrinsics, k2: CameraIntrinsics
               ) -> tuple[np.ndarray, np.ndarray] | None:
    try:
        e = essential_from_fundamental(pose, k1, k2)
        return decompose_essential(e, xs, ys, k1, k2)
    except (CheiralityTieError, ValueError):
        return None


def stop_check(pose_t: EpipolarPose, pose_prev: EpipolarPose,
               k1: CameraIntrinsics | None, k2: CameraIntrinsics | None,
               xs: np.ndarray, ys: np.ndarray,
               theta_pose_deg: float = 1.5) -> bool:
    """True when two consecutive poses agree within the angular threshold.

    Requires intrinsics to decompose both poses; without them (or on an
    ambiguous cheirality vote) the answer is False and the loop runs its
    fixed iteration budget.
    """
    if k1 is None or k2 is None or len(np.atleast_2d(xs)) < 1:
        return False
    a = _decompose(pose_t, xs, ys, k1, k2)
    b = _decompose(pose_prev, xs, ys, k1, k2)
    if a is None or b is None:
        return False
    return pose_error(a, b) < theta_pose_deg


def pose_guided_match(x_coords: np.ndarray, y_coords: np.ndarray, mm: MatchMatrix,
                      pose: EpipolarPose, threshold_px: float = 12.0,
                      extract_threshold: float = 0.1,
                      mutual: bool = True) -> list[ScoredMatch]:
    """Rescue matches under the pose's epipolar mask.

    All-pairs Sampson distances are binarized at `threshold_px` (geometric
    pixels), the mask is multiplied element-wise into the assignment scores,
    and matches are extracted at the relaxed threshold: off-epipolar
    candidates drop out, so sub-threshold on-epipolar candidates can win
    their rows.
    """
    s = sampson_distance_matrix(pose, x_coords, y_coords)
    mask = s <= threshold_px ** 2
    return extract_matches(mm.scores * mask, extract_threshold, mutual)


def _sampling_scores(maps) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Self/cross sampling scores for both images from the four maps.

    A keypoint's score is the attention it attracts as a key: X's cross score
    therefore comes from the other image's cross map (its keys are X), and
    symmetrically for Y.
    """
    a_xs, a_xc, a_ys, a_yc = maps
    return (keypoint_contribution_scores(a_xs),
            keypoint_contribution_scores(a_yc),
            keypoint_contribution_scores(a_ys),
            keypoint_contribution_scores(a_xc))


def run_pair(kps_x: attn.KeypointSet, kps_y: attn.KeypointSet,
             weights: WeightStore | None, config: PipelineConfig
             ) -> tuple[list[ScoredMatch], EpipolarPose | None, IterationTrace]:
    """Run the full iterative loop on one keypoint pair.

    Per iteration: descriptor augmentation (bypassed when no complete weight
    store is given), Sinkhorn matching, RANSAC pose estimation, the
    pose-convergence stop check, and keypoint sampling for the next
    iteration. After termination, a single pose-guided rescue pass runs when
    a pose exists. Never aborts mid-pair: pose failures are recorded and the
    previous pose is carried forward for sampling.

    Returns (final matches in original indices, final pose or None, trace).
    """
    trained = weights is not None and not weights.untrained
    if trained:
        enc = attn.encoder_from_store(weights)
        x_full = attn.encode_position(kps_x, enc)
        y_full = attn.encode_position(kps_y, enc)
        blocks = [attn.block_params_from_store(weights, t)
                  for t in range(weights.iteration_count)]
    else:
        x_full = kps_x.descriptors
        y_full = kps_y.descriptors

    k1, k2 = kps_x.intrinsics, kps_y.intrinsics
    sizes = (kps_x.image_size, kps_y.image_size)
    iter_seeds = np.random.SeedSequence(config.seed).generate_state(config.t_max)

    active_x = np.arange(kps_x.count)
    active_y = np.arange(kps_y.count)
    x_cur, y_cur = x_full, y_full

    trace = IterationTrace(config=config.to_dict())
    cur_pose: EpipolarPose | None = None
    cur_decomp = None
    prev_decomp = None
    last_mm: MatchMatrix | None = None
    last_matches: list[ScoredMatch] = []
    d = None   # distance cache, valid while bypass descriptors are unchanged

    for t in range(1, config.t_max + 1):
        t0 = time.perf_counter()
        if trained:
            block = blocks[min(t - 1, len(blocks) - 1)]
            state = attn.iteration_block(
                attn.AttentionState(x_cur, y_cur, active_x, active_y), block)
            x_cur, y_cur = state.x_desc, state.y_desc
            maps = (state.a_xs, state.a_xc, state.a_ys, state.a_yc)
            d = None
        else:
            # The bypass stand-in for the attention forward pass. Computed in
            # every pooling mode so per-iteration cost scales with the active
            # counts the same way the trained pipeline's would.
            maps = attn.bypass_attention_maps(x_cur, y_cur)

        if d is None:
            d = pairwise_distance(x_cur, y_cur)
        mm = sinkhorn(d, config.dustbin_score, config.sinkhorn_iterations,
                      config.inv_temperature)
        local = extract_matches(mm, config.theta_match, config.mutual_matches)
        matches = [ScoredMatch(int(active_x[i]), int(active_y[j]), s)
                   for i, j, s in local]
        last_mm, last_matches = mm, matches

        mx = kps_x.coords[[m.i for m in matches]]
        my = kps_y.coords[[m.j for m in matches]]
        scores = np.array([m.score for m in matches])

        pose_new = None
        if len(matches) >= 8:
            fit = ransac_fundamental(mx, my, scores,
                                     iterations=config.ransac_iterations,
                                     inlier_threshold_px=config.ransac_threshold_px,
                                     seed=int(iter_seeds[t - 1]))
            if fit is not None:
                pose_new = fit[0]

        delta = None
        stopped = False
        if pose_new is not None:
            prev_decomp = cur_decomp if cur_pose is not None else None
            cur_pose = pose_new
            cur_decomp = (_decompose(pose_new, mx, my, k1, k2)
                          if k1 is not None and k2 is not None else None)
            if cur_decomp is not None and prev_decomp is not None:
                delta = pose_error(cur_decomp, prev_decomp)
                if config.early_stop and delta < config.theta_pose_deg:
                    stopped = True

        r = 0.0
        if cur_pose is not None and len(matches) > 0:
            r = pose_uncertainty(mx, my, scores, cur_pose, k1, k2, sizes,
                                 config.theta_epipolar, config.theta_match)

        do_sample = (config.pooling != "off" and not stopped and t < config.t_max)
        if do_sample:
            x_self, x_cross, y_self, y_cross = _sampling_scores(maps)
            if config.pooling == "adaptive":
                decision = adaptive_sample(mm.scores, x_self, x_cross, y_self, y_cross,
                                           threshold=config.theta_match * r,
                                           uncertainty=r, floor=config.keypoint_floor)
                keep_x, keep_y = decision.kept_x, decision.kept_y
            else:
                keep_x = r50_sample(x_self, x_cross, floor=config.keypoint_floor)
                keep_y = r50_sample(y_self, y_cross, floor=config.keypoint_floor)

        trace.records.append(IterationRecord(
            t=t, kept_x=len(active_x), kept_y=len(active_y),
            n_matches=len(matches), pose=pose_new, pose_delta_deg=delta,
            r=r, stopped=stopped,
            ms=(time.perf_counter() - t0) * 1000.0,
            active_x=active_x.copy(), active_y=active_y.copy(),
            matches=matches,
        ))
        if stopped:
            break
        if do_sample:
            active_x = active_x[keep_x]
            active_y = active_y[keep_y]
            x_cur = x_cur[keep_x]
            y_cur = y_cur[keep_y]
            d = None

    trace.total_iters = len(trace.records)
    trace.final_pose = cur_pose

    final_matches = last_matches
    if cur_pose is not None and last_mm is not None:
        rescued_local = pose_guided_match(
            kps_x.coords[active_x], kps_y.coords[active_y], last_mm, cur_pose,
            threshold_px=config.rescue_threshold_px,
            extract_threshold=config.theta_match * config.rescue_threshold_factor,
            mutual=config.mutual_matches)
        final_matches = [ScoredMatch(int(active_x[i]), int(active_y[j]), s)
                         for i, j, s in rescued_local]
        before = {(m.i, m.j) for m in last_matches}
        trace.rescued = sum(1 for m in final_matches if (m.i, m.j) not in before)

    return final_matches, cur_pose, trace
