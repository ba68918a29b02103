"""Descriptor augmentation: position encoding, one self+cross attention pass,
and the shared-attention second pass that reuses the cached attention maps.

Attention maps are stored as (query, key, head) tensors whose rows sum to 1
per head. When no trained weight store is available the augmentation stack is
bypassed entirely: raw descriptors flow to matching, and identity-projection
maps (plain descriptor-similarity softmax, one head) stand in for the learned
attention so the sampling machinery still has scores to work with.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .epipolar import CameraIntrinsics
from .numerics import MlpParams, WeightStore, mlp_forward, softmax_rows

# Attention forward passes may run in float32; geometry stays float64.
_FORWARD_DTYPE = np.float64


def set_forward_dtype(bits: int) -> None:
    """Switch the attention forward precision (32 or 64). Default is 64."""
    global _FORWARD_DTYPE
    if bits == 32:
        _FORWARD_DTYPE = np.float32
    elif bits == 64:
        _FORWARD_DTYPE = np.float64
    else:
        raise ValueError("bits must be 32 or 64")


@dataclass
class KeypointSet:
    """One image's keypoints: pixel coordinates, detection confidences,
    unit-norm descriptors, optional intrinsics, and the image size (w, h).

    Descriptor rows are renormalized on ingestion; `renormalized` records
    whether any row actually changed.
    """

    coords: np.ndarray
    confidences: np.ndarray
    descriptors: np.ndarray
    intrinsics: CameraIntrinsics | None = None
    image_size: tuple[int, int] = (640, 480)
    renormalized: bool = field(default=False)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        self.confidences = np.asarray(self.confidences, dtype=np.float64).ravel()
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        n = len(self.coords)
        if n < 1:
            raise ValueError("a keypoint set needs at least one keypoint")
        if self.descriptors.ndim != 2 or len(self.descriptors) != n \
                or len(self.confidences) != n:
            raise ValueError("coords, confidences and descriptors disagree in length")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("keypoint coordinates must be finite")
        self.confidences = np.clip(self.confidences, 0.0, 1.0)
        norms = np.linalg.norm(self.descriptors, axis=1)
        if np.any(norms <= 0):
            raise ValueError("zero descriptor rows cannot be normalized")
        if np.any(np.abs(norms - 1.0) > 1e-9):
            self.descriptors = self.descriptors / norms[:, None]
            self.renormalized = True

    @property
    def count(self) -> int:
        return len(self.coords)

    @property
    def descriptor_dim(self) -> int:
        return self.descriptors.shape[1]


@dataclass
class AttentionState:
    """Augmented descriptors plus the four attention maps of the current
    iteration and the active index lists into the original keypoint sets."""

    x_desc: np.ndarray
    y_desc: np.ndarray
    active_x: np.ndarray
    active_y: np.ndarray
    a_xs: np.ndarray | None = None
    a_xc: np.ndarray | None = None
    a_ys: np.ndarray | None = None
    a_yc: np.ndarray | None = None

    def __post_init__(self):
        for name in ("active_x", "active_y"):
            idx = np.asarray(getattr(self, name), dtype=int)
            if len(idx) and np.any(np.diff(idx) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
            setattr(self, name, idx)


@dataclass(frozen=True)
class AttentionParams:
    """First-pass layers of one branch: query/key/value/projection plus the
    post-concatenation MLP."""

    q: tuple[np.ndarray, np.ndarray]
    k: tuple[np.ndarray, np.ndarray]
    v: tuple[np.ndarray, np.ndarray]
    proj: tuple[np.ndarray, np.ndarray]
    mlp: MlpParams


@dataclass(frozen=True)
class SharedAttentionParams:
    """Second-pass layers: a fresh value projection and output path, applied
    under the cached attention maps."""

    v: tuple[np.ndarray, np.ndarray]
    proj: tuple[np.ndarray, np.ndarray]
    mlp: MlpParams


@dataclass(frozen=True)
class BlockParams:
    """All parameters of one iteration block; shared between the two images."""

    self_pass: AttentionParams
    cross_pass: AttentionParams
    self_shared: SharedAttentionParams
    cross_shared: SharedAttentionParams
    heads: int


def encode_position(kps: KeypointSet, enc: MlpParams) -> np.ndarray:
    """Descriptors shifted by the encoded (u, v, c) triples.

    Coordinates are normalized to [-1, 1] per axis using the image size
    before encoding, so untrained or seeded encoders stay scale-stable.
    """
    w, h = kps.image_size
    u = 2.0 * kps.coords[:, 0] / w - 1.0
    v = 2.0 * kps.coords[:, 1] / h - 1.0
    inputs = np.column_stack([u, v, kps.confidences])
    return kps.descriptors + mlp_forward(enc, inputs)


def _linear(x: np.ndarray, layer: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    w, b = layer
    return x @ w + b


def _multi_head_softmax(q: np.ndarray, k: np.ndarray, heads: int) -> np.ndarray:
    """Per-head scaled dot-product attention map, shape (queries, keys, heads)."""
    m, d = q.shape
    n = k.shape[0]
    if d % heads != 0:
        raise ValueError(f"descriptor dim {d} not divisible by {heads} heads")
    dh = d // heads
    qh = q.reshape(m, heads, dh)
    kh = k.reshape(n, heads, dh)
    logits = np.einsum("mhd,nhd->hmn", qh, kh) / np.sqrt(dh)
    a = softmax_rows(logits.reshape(heads * m, n)).reshape(heads, m, n)
    return np.ascontiguousarray(a.transpose(1, 2, 0))


def _message(amap: np.ndarray, values: np.ndarray, heads: int) -> np.ndarray:
    m, n, _ = amap.shape
    dh = values.shape[1] // heads
    vh = values.reshape(n, heads, dh)
    return np.einsum("mnh,nhd->mhd", amap, vh).reshape(m, heads * dh)


def attention_pass(x: np.ndarray, y: np.ndarray, params: AttentionParams,
                   direction: str, heads: int) -> tuple[np.ndarray, np.ndarray]:
    """One attention update for the set `x`, attending to itself ("self") or
    to `y` ("cross").

    Returns the residual delta (the MLP applied to the projected message
    concatenated with the input) and the fresh attention map.
    """
    if direction not in ("self", "cross"):
        raise ValueError(f"unknown direction {direction!r}")
    x = np.asarray(x, dtype=_FORWARD_DTYPE)
    source = x if direction == "self" else np.asarray(y, dtype=_FORWARD_DTYPE)
    q = _linear(x, params.q)
    k = _linear(source, params.k)
    v = _linear(source, params.v)
    amap = _multi_head_softmax(q, k, heads)
    msg = _linear(_message(amap, v, heads), params.proj)
    delta = mlp_forward(params.mlp, np.concatenate([msg, x], axis=1))
    return delta.astype(np.float64), amap.astype(np.float64)


def shared_attention_pass(x: np.ndarray, y: np.ndarray, cached_map: np.ndarray,
                          params: SharedAttentionParams, direction: str) -> np.ndarray:
    """Second-pass update reusing a cached attention map: fresh value and
    projection layers, no softmax recomputation."""
    if direction not in ("self", "cross"):
        raise ValueError(f"unknown direction {direction!r}")
    x = np.asarray(x, dtype=_FORWARD_DTYPE)
    source = x if direction == "self" else np.asarray(y, dtype=_FORWARD_DTYPE)
    if cached_map.shape[:2] != (x.shape[0], source.shape[0]):
        raise ValueError(
            f"cached map shape {cached_map.shape} does not match inputs "
            f"({x.shape[0]} queries, {source.shape[0]} keys)")
    heads = cached_map.shape[2]
    v = _linear(source, params.v)
    msg = _linear(_message(cached_map, v, heads), params.proj)
    delta = mlp_forward(params.mlp, np.concatenate([msg, x], axis=1))
    return delta.astype(np.float64)


def iteration_block(state: AttentionState, params: BlockParams) -> AttentionState:
    """One full augmentation block: self+cross attention for both sets, then
    the shared-attention second pass, all reading the iteration's inputs."""
    x0, y0 = state.x_desc, state.y_desc
    h = params.heads
    dx_s, a_xs = attention_pass(x0, y0, params.self_pass, "self", h)
    dx_c, a_xc = attention_pass(x0, y0, params.cross_pass, "cross", h)
    dy_s, a_ys = attention_pass(y0, x0, params.self_pass, "self", h)
    dy_c, a_yc = attention_pass(y0, x0, params.cross_pass, "cross", h)
    x1 = x0 + dx_s + dx_c
    y1 = y0 + dy_s + dy_c
    x2 = x1 + shared_attention_pass(x0, y0, a_xs, params.self_shared, "self") \
            + shared_attention_pass(x0, y0, a_xc, params.cross_shared, "cross")
    y2 = y1 + shared_attention_pass(y0, x0, a_ys, params.self_shared, "self") \
            + shared_attention_pass(y0, x0, a_yc, params.cross_shared, "cross")
    return AttentionState(
        x_desc=x2, y_desc=y2,
        active_x=state.active_x, active_y=state.active_y,
        a_xs=a_xs, a_xc=a_xc, a_ys=a_ys, a_yc=a_yc,
    )


def bypass_attention_maps(x: np.ndarray, y: np.ndarray
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Single-head descriptor-similarity maps for the untrained bypass.

    With no trained projections available, plain softmax(X X^T / sqrt(d))
    stands in for the learned attention so keypoint sampling still gets
    row-stochastic maps to score. Runs at the module forward dtype.
    """
    x = np.asarray(x, dtype=_FORWARD_DTYPE)
    y = np.asarray(y, dtype=_FORWARD_DTYPE)
    scale = np.asarray(1.0 / np.sqrt(x.shape[1]), dtype=_FORWARD_DTYPE)
    cross = x @ y.T * scale
    a_xs = softmax_rows(x @ x.T * scale)[:, :, None]
    a_ys = softmax_rows(y @ y.T * scale)[:, :, None]
    a_xc = softmax_rows(cross)[:, :, None]
    a_yc = softmax_rows(np.ascontiguousarray(cross.T))[:, :, None]
    return a_xs, a_xc, a_ys, a_yc


def _mlp_from_store(store: WeightStore, prefix: str, n_layers: int,
                    activations: tuple[str, ...]) -> MlpParams:
    layers = tuple(
        (store.matrix(f"{prefix}/l{i}/w"), store.matrix(f"{prefix}/l{i}/b"))
        for i in range(n_layers)
    )
    return MlpParams(layers=layers, activations=activations)


def encoder_from_store(store: WeightStore) -> MlpParams:
    return _mlp_from_store(store, "enc", 3, ("relu", "relu", "linear"))


def block_params_from_store(store: WeightStore, t: int) -> BlockParams:
    """Assemble one iteration block's parameters from a complete store."""

    def pair(name: str) -> tuple[np.ndarray, np.ndarray]:
        return store.matrix(f"{name}/w"), store.matrix(f"{name}/b")

    def branch(name: str) -> AttentionParams:
        base = f"blk{t}/{name}"
        return AttentionParams(
            q=pair(f"{base}/q"), k=pair(f"{base}/k"), v=pair(f"{base}/v"),
            proj=pair(f"{base}/proj"),
            mlp=_mlp_from_store(store, f"{base}/mlp", 3, ("relu", "relu", "linear")),
        )

    def shared(name: str) -> SharedAttentionParams:
        base = f"blk{t}/{name}"
        return SharedAttentionParams(
            v=pair(f"{base}/v2"), proj=pair(f"{base}/proj2"),
            mlp=_mlp_from_store(store, f"{base}/mlp2", 3, ("relu", "relu", "linear")),
        )

    return BlockParams(
        self_pass=branch("self"), cross_pass=branch("cross"),
        self_shared=shared("self"), cross_shared=shared("cross"),
        heads=store.head_count,
    )
