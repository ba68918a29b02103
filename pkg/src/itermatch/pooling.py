"""Adaptive geometry-aware keypoint sampling: attention-score reduction,
median-guided expansion around matched keypoints, pose-uncertainty threshold
adjustment, and the fixed-ratio (top 50%) baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .epipolar import CameraIntrinsics, EpipolarPose, sampson_distances

# Images at or below this many keypoints are never pruned.
KEYPOINT_FLOOR = 256


def attention_scores(amap: np.ndarray) -> np.ndarray:
    """Per-query mean of an attention tensor over its head and key dimensions,
    renormalized to sum 1.

    Accepts (queries, keys) or (queries, keys, heads) tensors. The reduction
    leaves the query dimension free: what a keypoint receives in other rows
    does not enter its score.
    """
    amap = np.asarray(amap, dtype=np.float64)
    if amap.ndim == 2:
        raw = amap.mean(axis=1)
    elif amap.ndim == 3:
        raw = amap.mean(axis=(1, 2))
    else:
        raise ValueError(f"expected a 2-D or 3-D attention tensor, got {amap.shape}")
    total = raw.sum()
    if total <= 0:
        raise ValueError("attention scores must have positive mass")
    return raw / total


def keypoint_contribution_scores(amap: np.ndarray) -> np.ndarray:
    """Scores of the KEY-side keypoints of a map: how much attention each one
    attracts across all queries (and heads), normalized to sum 1.

    Row-stochastic maps reduce to a constant under the plain query-side mean,
    so sampling ranks keypoints by the attention they receive instead; this is
    the query-side reduction applied to the axis-swapped map.
    """
    return attention_scores(np.swapaxes(np.asarray(amap), 0, 1))


def pose_uncertainty(xs: np.ndarray, ys: np.ndarray, scores: np.ndarray,
                     pose: EpipolarPose,
                     k1: CameraIntrinsics | None, k2: CameraIntrinsics | None,
                     image_sizes: tuple[tuple[int, int], tuple[int, int]],
                     theta_epipolar: float = 0.005,
                     theta_match: float = 0.2) -> float:
    """Fraction of confident matches consistent with the pose.

    Sampson values are evaluated in intrinsics-normalized coordinates when
    intrinsics exist, else in pixel coordinates divided by the image diagonal
    (the consistency threshold is only dimensionally meaningful in normalized
    units). No confident matches gives r = 0: keep everything.
    """
    scores = np.asarray(scores, dtype=np.float64)
    confident = scores >= theta_match
    denom = int(confident.sum())
    if denom == 0:
        return 0.0
    xs = np.asarray(xs, dtype=np.float64).reshape(-1, 2)[confident]
    ys = np.asarray(ys, dtype=np.float64).reshape(-1, 2)[confident]

    if k1 is not None and k2 is not None:
        f_norm = k2.K.T @ pose.F @ k1.K
        xn = (xs - [k1.cx, k1.cy]) / [k1.fx, k1.fy]
        yn = (ys - [k2.cx, k2.cy]) / [k2.fx, k2.fy]
    else:
        (w1, h1), (w2, h2) = image_sizes
        l1 = float(np.hypot(w1, h1))
        l2 = float(np.hypot(w2, h2))
        s1 = np.diag([l1, l1, 1.0])
        s2 = np.diag([l2, l2, 1.0])
        f_norm = s2 @ pose.F @ s1
        xn = xs / l1
        yn = ys / l2

    consistent = sampson_distances(f_norm, xn, yn) <= theta_epipolar
    return float(consistent.sum() / denom)


@dataclass(frozen=True)
class SamplingDecision:
    """Kept index lists (into the arrays the decision was computed on), the
    component sets behind them, and the bookkeeping of the decision."""

    kept_x: np.ndarray
    kept_y: np.ndarray
    matched_x: np.ndarray
    matched_y: np.ndarray
    expanded_self_x: np.ndarray
    expanded_cross_x: np.ndarray
    expanded_self_y: np.ndarray
    expanded_cross_y: np.ndarray
    threshold: float
    uncertainty: float
    floor_x: bool
    floor_y: bool


def _lower_median(values: np.ndarray) -> float:
    ordered = np.sort(values)
    return float(ordered[(len(ordered) - 1) // 2])


def _expand(scores: np.ndarray, matched: np.ndarray) -> np.ndarray:
    if len(matched) == 0:
        return np.empty(0, dtype=int)
    med = _lower_median(scores[matched])
    return np.nonzero(scores >= med)[0]


def _one_side(matched: np.ndarray, self_scores: np.ndarray, cross_scores: np.ndarray,
              count: int, floor: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    exp_self = _expand(self_scores, matched)
    exp_cross = _expand(cross_scores, matched)
    if len(matched) == 0:
        return np.arange(count), exp_self, exp_cross, True
    kept = np.union1d(np.union1d(matched, exp_self), exp_cross)
    if count <= floor or len(kept) <= floor:
        return np.arange(count), exp_self, exp_cross, True
    return kept, exp_self, exp_cross, False


def adaptive_sample(match_scores: np.ndarray,
                    x_self: np.ndarray, x_cross: np.ndarray,
                    y_self: np.ndarray, y_cross: np.ndarray,
                    threshold: float,
                    uncertainty: float = 0.0,
                    floor: int = KEYPOINT_FLOOR) -> SamplingDecision:
    """Union of matched keypoints and those whose self/cross attention scores
    reach the median score of the matched set, per image.

    `match_scores` is the real m x n block of the assignment matrix and
    `threshold` the already-adjusted effective value. Images at or below the
    floor, unions that would shrink below it, and empty matched sets all skip
    sampling for that image (everything is kept, floor flag set).
    """
    match_scores = np.asarray(match_scores, dtype=np.float64)
    m, n = match_scores.shape
    matched_x = np.nonzero(match_scores.max(axis=1) >= threshold)[0] if n else np.empty(0, int)
    matched_y = np.nonzero(match_scores.max(axis=0) >= threshold)[0] if m else np.empty(0, int)

    kept_x, esx, ecx, floor_x = _one_side(matched_x, np.asarray(x_self), np.asarray(x_cross), m, floor)
    kept_y, esy, ecy, floor_y = _one_side(matched_y, np.asarray(y_self), np.asarray(y_cross), n, floor)
    return SamplingDecision(
        kept_x=kept_x, kept_y=kept_y,
        matched_x=matched_x, matched_y=matched_y,
        expanded_self_x=esx, expanded_cross_x=ecx,
        expanded_self_y=esy, expanded_cross_y=ecy,
        threshold=float(threshold), uncertainty=float(uncertainty),
        floor_x=floor_x, floor_y=floor_y,
    )


def r50_sample(self_scores: np.ndarray, cross_scores: np.ndarray,
               ratio: float = 0.5, floor: int = KEYPOINT_FLOOR) -> np.ndarray:
    """Ratio baseline: union of the top-ceil(ratio*m) keypoints by self score
    and by cross score, ties broken by lower index, same floor rule."""
    self_scores = np.asarray(self_scores, dtype=np.float64)
    cross_scores = np.asarray(cross_scores, dtype=np.float64)
    m = len(self_scores)
    k = int(np.ceil(ratio * m))

    def top(scores: np.ndarray) -> np.ndarray:
        order = np.lexsort((np.arange(m), -scores))
        return order[:k]

    kept = np.union1d(top(self_scores), top(cross_scores))
    if m <= floor or len(kept) <= floor:
        return np.arange(m)
    return kept
