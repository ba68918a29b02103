"""Two-view geometry: Sampson distance, weighted 8-point, essential-matrix
decomposition, pose error metrics, and RANSAC.

Conventions used throughout:
  * image points are (u, v) pixel pairs, lifted to (u, v, 1) internally;
  * the epipolar constraint is y^T F x = 0 where x is in the first image;
  * fundamental matrices are stored rank-2 with unit Frobenius norm and the
    largest-magnitude entry positive, so comparisons and norms are well
    defined despite the projective scale/sign ambiguity;
  * Sampson values are squared distances; thresholds expressed in pixels are
    geometric, i.e. a point passes a threshold of k px when sampson <= k**2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .numerics import smallest_right_singular_vector, svd3

# Below this, the Sampson denominator is treated as degenerate.
_DENOM_EPS = 1e-18


class DegenerateConfigurationError(ValueError):
    """The constraint system is rank deficient (e.g. coplanar keypoints)."""


class InsufficientMatchesError(ValueError):
    """Fewer than 8 positively weighted correspondences."""


class CheiralityTieError(ValueError):
    """Essential-matrix decomposition could not pick a unique candidate."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"])


class ScoredMatch(NamedTuple):
    i: int
    j: int
    score: float


def normalize_fundamental(f: np.ndarray, rank2_project: bool = True) -> np.ndarray:
    """Project to rank 2 (optional), scale to unit Frobenius norm, fix the sign."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got {f.shape}")
    if rank2_project:
        u, s, v = svd3(f)
        f = (u * np.array([s[0], s[1], 0.0])) @ v.T
    norm = np.linalg.norm(f)
    if norm == 0:
        raise ValueError("zero matrix cannot be normalized")
    f = f / norm
    flat = f.ravel()
    k = int(np.argmax(np.abs(flat)))
    if flat[k] < 0:
        f = -f
    return f


@dataclass(frozen=True)
class EpipolarPose:
    """A fundamental matrix in the package normalization, with optional (R, t)."""

    F: np.ndarray
    R: np.ndarray | None = None
    t: np.ndarray | None = None

    @classmethod
    def from_matrix(cls, f: np.ndarray, R: np.ndarray | None = None,
                    t: np.ndarray | None = None) -> "EpipolarPose":
        t = None if t is None else np.asarray(t, dtype=np.float64) / np.linalg.norm(t)
        return cls(F=normalize_fundamental(f), R=R, t=t)


def _as_matrix(f) -> np.ndarray:
    if isinstance(f, EpipolarPose):
        return f.F
    return np.asarray(f, dtype=np.float64)


def _homogeneous(pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    return np.column_stack([pts, np.ones(len(pts))])


def sampson_distance(f, x, y) -> float:
    """Sampson distance (squared units) of one correspondence under F.

    Returns +inf when the denominator degenerates, which callers treat as
    a non-inlier.
    """
    return float(sampson_distances(f, np.asarray(x)[None, :], np.asarray(y)[None, :])[0])


def sampson_distances(f, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorized Sampson distance for paired correspondences."""
    f = _as_matrix(f)
    xh = _homogeneous(xs)
    yh = _homogeneous(ys)
    fx = xh @ f.T            # rows are (F x_i)^T
    fty = yh @ f             # rows are (F^T y_i)^T
    num = np.einsum("ij,ij->i", yh, fx) ** 2
    den = fx[:, 0] ** 2 + fx[:, 1] ** 2 + fty[:, 0] ** 2 + fty[:, 1] ** 2
    out = np.full(len(xh), np.inf)
    ok = den > _DENOM_EPS
    out[ok] = num[ok] / den[ok]
    return out


def sampson_distance_matrix(f, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """All-pairs Sampson distances: entry (i, j) scores (xs[i], ys[j])."""
    f = _as_matrix(f)
    xh = _homogeneous(xs)
    yh = _homogeneous(ys)
    fx = xh @ f.T                      # (m, 3)
    fty = yh @ f                       # (n, 3)
    num = (fx @ yh.T) ** 2             # (m, n): (y_j^T F x_i)^2
    a = fx[:, 0] ** 2 + fx[:, 1] ** 2
    b = fty[:, 0] ** 2 + fty[:, 1] ** 2
    den = a[:, None] + b[None, :]
    out = np.full(num.shape, np.inf)
    ok = den > _DENOM_EPS
    out[ok] = num[ok] / den[ok]
    return out


def _hartley_transform(pts: np.ndarray) -> np.ndarray:
    """Translation+scaling taking the centroid to the origin and the mean
    distance to sqrt(2)."""
    centroid = pts.mean(axis=0)
    dist = np.linalg.norm(pts - centroid, axis=1).mean()
    if dist <= 0:
        raise DegenerateConfigurationError("all points coincide")
    s = np.sqrt(2.0) / dist
    return np.array([
        [s, 0.0, -s * centroid[0]],
        [0.0, s, -s * centroid[1]],
        [0.0, 0.0, 1.0],
    ])


def _constraint_rows(xh: np.ndarray, yh: np.ndarray) -> np.ndarray:
    # Coefficients of y^T F x = 0 for F flattened row-major.
    return np.einsum("ni,nj->nij", yh, xh).reshape(len(xh), 9)


def weighted_eight_point(xs: np.ndarray, ys: np.ndarray,
                         weights: np.ndarray | None = None) -> EpipolarPose:
    """Weighted least-squares fundamental matrix from >= 8 correspondences.

    Both point sets are Hartley-normalized, each constraint row is scaled by
    its weight, the 9-vector is the smallest right singular vector, and the
    result is denormalized, rank-2 projected, and normalized.

    Raises InsufficientMatchesError with fewer than 8 positive weights and
    DegenerateConfigurationError when the constraint matrix is rank deficient.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if weights is None:
        weights = np.ones(len(xs))
    weights = np.asarray(weights, dtype=np.float64)
    keep = weights > 0
    if keep.sum() < 8:
        raise InsufficientMatchesError(
            f"need >= 8 positively weighted matches, got {int(keep.sum())}")
    xs, ys, weights = xs[keep], ys[keep], weights[keep]

    t1 = _hartley_transform(xs)
    t2 = _hartley_transform(ys)
    xh = _homogeneous(xs) @ t1.T
    yh = _homogeneous(ys) @ t2.T

    a = _constraint_rows(xh, yh) * weights[:, None]
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[7] / sv[0] < 1e-12:
        raise DegenerateConfigurationError(
            "constraint matrix is rank deficient (degenerate configuration)")
    f_hat = smallest_right_singular_vector(a).reshape(3, 3)
    f = t2.T @ f_hat @ t1
    return EpipolarPose.from_matrix(f)


def essential_from_fundamental(f, k1: CameraIntrinsics, k2: CameraIntrinsics) -> np.ndarray:
    """E = K2^T F K1 with its two nonzero singular values averaged to equality.

    The result is returned in the same normalization as fundamental matrices
    (unit Frobenius norm, largest-magnitude entry positive).
    """
    f = _as_matrix(f)
    e = k2.K.T @ f @ k1.K
    u, s, v = svd3(e)
    mean_sv = 0.5 * (s[0] + s[1])
    e = (u * np.array([mean_sv, mean_sv, 0.0])) @ v.T
    return normalize_fundamental(e, rank2_project=False)


def _triangulate_depths(xn: np.ndarray, yn: np.ndarray, r: np.ndarray,
                        t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Depths of DLT-triangulated points in both views. xn/yn are normalized
    image coordinates (unit focal)."""
    n = len(xn)
    p1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    p2 = np.hstack([r, t[:, None]])
    a = np.empty((n, 4, 4))
    a[:, 0] = xn[:, 0, None] * p1[2] - p1[0]
    a[:, 1] = xn[:, 1, None] * p1[2] - p1[1]
    a[:, 2] = yn[:, 0, None] * p2[2] - p2[0]
    a[:, 3] = yn[:, 1, None] * p2[2] - p2[1]
    _, _, vh = np.linalg.svd(a)
    pts = vh[:, -1, :]
    w = pts[:, 3]
    # Points at infinity never vote; give them zero depth.
    with np.errstate(divide="ignore", invalid="ignore"):
        z1 = np.where(np.abs(w) > 1e-15, pts[:, 2] / w, 0.0)
        xyz = pts[:, :3] / np.where(np.abs(w) > 1e-15, w, 1.0)[:, None]
    z2 = xyz @ r[2] + t[2]
    return z1, z2


def decompose_essential(e: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                        k1: CameraIntrinsics, k2: CameraIntrinsics
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and unit translation from E via the 4-candidate cheirality vote.

    xs/ys are pixel correspondences used for voting; the candidate placing the
    most triangulated points in front of both cameras wins. An ambiguous vote
    raises CheiralityTieError.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if len(xs) < 1:
        raise ValueError("need at least one correspondence for cheirality voting")
    u, s, v = svd3(np.asarray(e, dtype=np.float64))
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(v) < 0:
        v = -v
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = u @ w @ v.T
    r2 = u @ w.T @ v.T
    tvec = u[:, 2]

    xn = (_homogeneous(xs) @ np.linalg.inv(k1.K).T)[:, :2]
    yn = (_homogeneous(ys) @ np.linalg.inv(k2.K).T)[:, :2]

    candidates = [(r1, tvec), (r1, -tvec), (r2, tvec), (r2, -tvec)]
    votes = []
    for r, t in candidates:
        z1, z2 = _triangulate_depths(xn, yn, r, t)
        votes.append(int(np.count_nonzero((z1 > 0) & (z2 > 0))))
    order = np.argsort(votes)
    if votes[order[-1]] == votes[order[-2]]:
        raise CheiralityTieError(
            f"ambiguous cheirality vote: {votes}")
    r, t = candidates[int(order[-1])]
    return r, t / np.linalg.norm(t)


def pose_error(a: tuple[np.ndarray, np.ndarray], b: tuple[np.ndarray, np.ndarray]) -> float:
    """Max of rotation angle and translation-direction angle, in degrees.

    Translation uses the absolute dot product: directions are compared up to
    sign because the scale/sign of t recovered from E is ambiguous.
    """
    ra, ta = a
    rb, tb = b
    cos_r = np.clip((np.trace(ra.T @ rb) - 1.0) / 2.0, -1.0, 1.0)
    ta = np.asarray(ta, dtype=np.float64)
    tb = np.asarray(tb, dtype=np.float64)
    cos_t = np.clip(
        abs(float(ta @ tb)) / (np.linalg.norm(ta) * np.linalg.norm(tb)), -1.0, 1.0)
    return float(np.degrees(max(np.arccos(cos_r), np.arccos(cos_t))))


def relative_pose_error(pose, gt_r: np.ndarray, gt_t: np.ndarray,
                        xs: np.ndarray, ys: np.ndarray,
                        k1: CameraIntrinsics, k2: CameraIntrinsics
                        ) -> tuple[float, float]:
    """(rotation, translation) angular errors in degrees of a fundamental-matrix
    pose against a ground-truth (R, t); (inf, inf) when decomposition fails."""
    try:
        e = essential_from_fundamental(pose, k1, k2)
        r, t = decompose_essential(e, xs, ys, k1, k2)
    except (CheiralityTieError, ValueError):
        return float("inf"), float("inf")
    cos_r = np.clip((np.trace(gt_r.T @ r) - 1.0) / 2.0, -1.0, 1.0)
    gt_t = gt_t / np.linalg.norm(gt_t)
    cos_t = np.clip(abs(float(gt_t @ t)), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos_r))), float(np.degrees(np.arccos(cos_t)))


def _batched_eight_point(xs8: np.ndarray, ys8: np.ndarray) -> np.ndarray:
    """Plain 8-point solves over a batch of minimal samples; returns (k, 3, 3)
    candidate fundamental matrices (NaN entries for degenerate samples)."""
    k = len(xs8)
    with np.errstate(divide="ignore", invalid="ignore"):
        c1 = xs8.mean(axis=1, keepdims=True)
        c2 = ys8.mean(axis=1, keepdims=True)
        d1 = np.linalg.norm(xs8 - c1, axis=2).mean(axis=1)
        d2 = np.linalg.norm(ys8 - c2, axis=2).mean(axis=1)
        s1 = np.sqrt(2.0) / d1
        s2 = np.sqrt(2.0) / d2
        xn = (xs8 - c1) * s1[:, None, None]
        yn = (ys8 - c2) * s2[:, None, None]
        xh = np.concatenate([xn, np.ones((k, 8, 1))], axis=2)
        yh = np.concatenate([yn, np.ones((k, 8, 1))], axis=2)
        a = np.einsum("kni,knj->knij", yh, xh).reshape(k, 8, 9)
        a = np.nan_to_num(a, nan=0.0, posinf=0.0, neginf=0.0)
        _, _, vh = np.linalg.svd(a)
        f_hat = vh[:, -1, :].reshape(k, 3, 3)
        u, s, vt = np.linalg.svd(f_hat)
        s = s.copy()
        s[:, 2] = 0.0
        f_hat = np.einsum("kij,kj,kjl->kil", u, s, vt)
        # Denormalize: F = T2^T Fhat T1 with T = [[s,0,-s cx],[0,s,-s cy],[0,0,1]].
        t1 = np.zeros((k, 3, 3))
        t1[:, 0, 0] = s1
        t1[:, 1, 1] = s1
        t1[:, 0, 2] = -s1 * c1[:, 0, 0]
        t1[:, 1, 2] = -s1 * c1[:, 0, 1]
        t1[:, 2, 2] = 1.0
        t2 = np.zeros((k, 3, 3))
        t2[:, 0, 0] = s2
        t2[:, 1, 1] = s2
        t2[:, 0, 2] = -s2 * c2[:, 0, 0]
        t2[:, 1, 2] = -s2 * c2[:, 0, 1]
        t2[:, 2, 2] = 1.0
        f = np.einsum("kji,kjl,klm->kim", t2, f_hat, t1)
    return f


def ransac_fundamental(xs: np.ndarray, ys: np.ndarray,
                       scores: np.ndarray | None = None,
                       iterations: int = 1000,
                       inlier_threshold_px: float = 3.0,
                       seed: int = 0) -> tuple[EpipolarPose, np.ndarray] | None:
    """RANSAC fundamental-matrix estimation over scored correspondences.

    Minimal 8-point candidates are scored by Sampson distance in pixel
    coordinates; the best-by-inlier-count model is refit with the weighted
    8-point solve on its inliers, using the matching scores as weights.
    Deterministic given the seed. Returns None when no candidate reaches
    8 inliers.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    n = len(xs)
    if n < 8:
        return None
    rng = np.random.default_rng(seed)

    draws = rng.random((iterations, n))
    if n == 8:
        samples = np.tile(np.arange(8), (iterations, 1))
    else:
        samples = np.argpartition(draws, 8, axis=1)[:, :8]
    f_cands = _batched_eight_point(xs[samples], ys[samples])

    xh = _homogeneous(xs)
    yh = _homogeneous(ys)
    with np.errstate(divide="ignore", invalid="ignore"):
        fx = np.einsum("kab,nb->kna", f_cands, xh)
        fty = np.einsum("kab,na->knb", f_cands, yh)
        num = np.einsum("na,kna->kn", yh, fx) ** 2
        den = fx[:, :, 0] ** 2 + fx[:, :, 1] ** 2 + fty[:, :, 0] ** 2 + fty[:, :, 1] ** 2
        d = np.where(den > _DENOM_EPS, num / den, np.inf)
    inlier = d <= inlier_threshold_px ** 2
    counts = inlier.sum(axis=1)
    best = int(np.argmax(counts))
    # A minimal sample always fits its own 8 points, so real consensus means
    # at least one inlier beyond it (except when only 8 matches exist).
    min_consensus = 8 if n == 8 else 9
    if counts[best] < min_consensus:
        return None

    mask = inlier[best]
    w = None if scores is None else np.asarray(scores, dtype=np.float64)[mask]
    try:
        pose = weighted_eight_point(xs[mask], ys[mask], w)
    except (DegenerateConfigurationError, InsufficientMatchesError):
        pose = EpipolarPose.from_matrix(f_cands[best])
    final = sampson_distances(pose, xs, ys) <= inlier_threshold_px ** 2
    if final.sum() < 8:
        final = mask
    return pose, final
