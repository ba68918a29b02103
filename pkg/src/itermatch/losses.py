"""Forward evaluation of the training objective: assignment log-likelihood,
pose difference, and epipolar-consistency terms. These are quality
functionals only; no gradients are computed anywhere."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .epipolar import EpipolarPose, sampson_distances

# Loss weights for (matching, pose, geometric-consistency) terms.
DEFAULT_LOSS_WEIGHTS = (0.6, 0.2, 0.2)

_LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class GroundTruth:
    """Supervision for one pair: matched index pairs, per-image unmatched sets,
    and the ground-truth pose.

    The pairs and unmatched sets must be disjoint per image and jointly cover
    the declared keypoint counts.
    """

    pairs: np.ndarray                 # (k, 2) int indices into X and Y
    unmatched_x: np.ndarray
    unmatched_y: np.ndarray
    pose: EpipolarPose | None = None
    num_x: int = 0
    num_y: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pairs", np.asarray(self.pairs, dtype=int).reshape(-1, 2))
        object.__setattr__(self, "unmatched_x", np.asarray(self.unmatched_x, dtype=int))
        object.__setattr__(self, "unmatched_y", np.asarray(self.unmatched_y, dtype=int))
        if self.num_x:
            self._check_cover(self.pairs[:, 0], self.unmatched_x, self.num_x, "X")
        if self.num_y:
            self._check_cover(self.pairs[:, 1], self.unmatched_y, self.num_y, "Y")

    @staticmethod
    def _check_cover(matched, unmatched, count, tag):
        ms, us = set(matched.tolist()), set(unmatched.tolist())
        if ms & us:
            raise ValueError(f"{tag}: matched and unmatched sets overlap")
        if ms | us != set(range(count)):
            raise ValueError(f"{tag}: supervision does not cover all {count} keypoints")


def matching_loss(expanded: np.ndarray, gt: GroundTruth, mode: str = "mean") -> float:
    """Negative log-likelihood of the expanded assignment matrix under gt.

    Sums -log over gt pairs, over the dustbin column for unmatched X
    keypoints, and over the dustbin row for unmatched Y keypoints. In "mean"
    mode each of the three sums is divided by its own count; "sum" keeps the
    plain sums. Entries are clamped at 1e-12 before the log.
    """
    if mode not in ("mean", "sum"):
        raise ValueError(f"unknown mode {mode!r}")
    expanded = np.asarray(expanded, dtype=np.float64)
    m, n = expanded.shape[0] - 1, expanded.shape[1] - 1
    if len(gt.pairs) == 0 and len(gt.unmatched_x) == 0 and len(gt.unmatched_y) == 0:
        raise ValueError("degenerate supervision: no gt pairs and no unmatched keypoints")

    def term(values: np.ndarray) -> float:
        if len(values) == 0:
            return 0.0
        s = -np.log(np.maximum(values, _LOG_CLAMP)).sum()
        return float(s / len(values)) if mode == "mean" else float(s)

    pair_vals = expanded[gt.pairs[:, 0], gt.pairs[:, 1]] if len(gt.pairs) else np.empty(0)
    ux_vals = expanded[gt.unmatched_x, n] if len(gt.unmatched_x) else np.empty(0)
    uy_vals = expanded[m, gt.unmatched_y] if len(gt.unmatched_y) else np.empty(0)
    return term(pair_vals) + term(ux_vals) + term(uy_vals)


def pose_loss(p: EpipolarPose, p_gt: EpipolarPose) -> float:
    """Frobenius norm of the difference of the two normalized matrices."""
    return float(np.linalg.norm(p.F - p_gt.F))


class ConsistencyLosses(NamedTuple):
    """Mean Sampson residuals tying poses and matches together.

    gt_match_residual: gt correspondences scored under the predicted pose.
    pred_match_residual: predicted correspondences scored under the gt pose.
    The *_empty flags mark terms that were zeroed for lack of input.
    """

    gt_match_residual: float
    pred_match_residual: float
    gt_empty: bool = False
    pred_empty: bool = False


def epipolar_consistency_losses(p: EpipolarPose, p_gt: EpipolarPose,
                                gt_xs: np.ndarray, gt_ys: np.ndarray,
                                pred_xs: np.ndarray, pred_ys: np.ndarray
                                ) -> ConsistencyLosses:
    """Both geometric-consistency terms; an empty input zeroes its term and
    sets the corresponding flag."""
    gt_xs = np.asarray(gt_xs, dtype=np.float64).reshape(-1, 2)
    pred_xs = np.asarray(pred_xs, dtype=np.float64).reshape(-1, 2)
    if len(gt_xs):
        l_gt = float(sampson_distances(p, gt_xs, gt_ys).mean())
        gt_empty = False
    else:
        l_gt, gt_empty = 0.0, True
    if len(pred_xs):
        l_pred = float(sampson_distances(p_gt, pred_xs, pred_ys).mean())
        pred_empty = False
    else:
        l_pred, pred_empty = 0.0, True
    return ConsistencyLosses(l_gt, l_pred, gt_empty, pred_empty)


def combined_loss(l_match: float, l_pose: float, l_gt_consistency: float,
                  l_pred_consistency: float,
                  weights: tuple[float, float, float] = DEFAULT_LOSS_WEIGHTS) -> float:
    """Weighted per-iteration loss: w_m * match + w_p * pose + w_g * (both
    consistency terms)."""
    w_m, w_p, w_g = weights
    if w_m < 0 or w_p < 0 or w_g < 0:
        raise ValueError("loss weights must be nonnegative")
    return w_m * l_match + w_p * l_pose + w_g * (l_gt_consistency + l_pred_consistency)


def total_loss(per_iteration: list[float]) -> float:
    """Mean of the per-iteration losses."""
    if not per_iteration:
        raise ValueError("no per-iteration losses")
    return float(np.mean(per_iteration))
