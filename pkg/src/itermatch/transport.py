"""Soft assignment between descriptor sets: pairwise distances, dustbin-expanded
log-domain Sinkhorn, and thresholded match extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .epipolar import ScoredMatch

# Potentials beyond this magnitude switch to the direct logsumexp path.
_POTENTIAL_GUARD = 500.0


@dataclass(frozen=True)
class MatchMatrix:
    """Sinkhorn output: the (m+1)x(n+1) expanded matrix with dustbin row/column.

    `scores` is the top-left m x n block. Each of the first m rows and first
    n columns of `expanded` sums to ~1 (up to the iteration tolerance).
    """

    expanded: np.ndarray
    iteration: int = 0

    @property
    def scores(self) -> np.ndarray:
        return self.expanded[:-1, :-1]

    def marginal_residuals(self) -> tuple[float, float]:
        """Max deviation from 1 of the real-cell row and column sums."""
        row = np.abs(self.expanded[:-1].sum(axis=1) - 1.0)
        col = np.abs(self.expanded[:, :-1].sum(axis=0) - 1.0)
        row_err = float(row.max()) if row.size else 0.0
        col_err = float(col.max()) if col.size else 0.0
        return row_err, col_err


def pairwise_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Euclidean distances between all rows of x and y.

    Computed via the expanded form |a|^2 + |b|^2 - 2 a.b, clamped at zero
    before the square root.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError(f"descriptor dimension mismatch: {x.shape} vs {y.shape}")
    sq = (x * x).sum(axis=1)[:, None] + (y * y).sum(axis=1)[None, :] - 2.0 * (x @ y.T)
    return np.sqrt(np.maximum(sq, 0.0))


def _lse_rows(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]


def sinkhorn(d: np.ndarray, dustbin_score: float = 1.0, iterations: int = 10,
             inv_temperature: float = 1.0) -> MatchMatrix:
    """Log-domain Sinkhorn on the dustbin-expanded similarity matrix.

    The cost enters as -d scaled by `inv_temperature`; the appended dustbin
    row/column carries `dustbin_score`. Row marginals are (1,...,1,n) and
    column marginals (1,...,1,m), so the dustbin can absorb every unmatched
    keypoint.

    Potentials are maintained in the log domain. Because the score matrix is
    fixed across normalizations, each log-sum-exp reduces to a mat-vec
    against the max-stabilized kernel exp(z - max(z)); when the potentials
    or the score range leave the float64 comfort zone the loop falls back to
    direct per-row log-sum-exp evaluation.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError(f"expected a 2-D distance matrix, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ValueError("distance matrix must be finite")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    m, n = d.shape

    z = np.empty((m + 1, n + 1))
    z[:m, :n] = -inv_temperature * d
    z[m, :] = dustbin_score
    z[:, n] = dustbin_score

    log_r = np.zeros(m + 1)
    log_r[m] = np.log(n) if n > 0 else 0.0
    log_c = np.zeros(n + 1)
    log_c[n] = np.log(m) if m > 0 else 0.0

    z_max = float(z.max())
    fast = (z_max - float(z.min())) < _POTENTIAL_GUARD
    kernel = np.exp(z - z_max) if fast else None

    u = np.zeros(m + 1)
    v = np.zeros(n + 1)
    for _ in range(iterations):
        if fast and max(np.abs(u).max(), np.abs(v).max()) < _POTENTIAL_GUARD:
            u = log_r - z_max - np.log(kernel @ np.exp(v))
            v = log_c - z_max - np.log(np.exp(u) @ kernel)
        else:
            u = log_r - _lse_rows(z + v[None, :])
            v = log_c - _lse_rows((z + u[:, None]).T)

    if fast and max(np.abs(u).max(), np.abs(v).max()) < _POTENTIAL_GUARD:
        expanded = kernel * np.exp(u + z_max)[:, None] * np.exp(v)[None, :]
    else:
        expanded = np.exp(z + u[:, None] + v[None, :])
    return MatchMatrix(expanded=expanded)


def extract_matches(mm, threshold: float, mutual: bool = True) -> list[ScoredMatch]:
    """Matches with score >= threshold; by default each must also be the
    argmax of both its row and its column, so no index repeats."""
    scores = mm.scores if isinstance(mm, MatchMatrix) else np.asarray(mm)
    if scores.size == 0:
        return []
    if not mutual:
        ii, jj = np.nonzero(scores >= threshold)
        return [ScoredMatch(int(i), int(j), float(scores[i, j])) for i, j in zip(ii, jj)]
    best_j = scores.argmax(axis=1)
    best_i = scores.argmax(axis=0)
    out = []
    for i, j in enumerate(best_j):
        s = scores[i, j]
        if s >= threshold and best_i[j] == i:
            out.append(ScoredMatch(int(i), int(j), float(s)))
    return out
