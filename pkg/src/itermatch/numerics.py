"""Dense linear-algebra kernels, small MLP forward passes, and the binary weight store.

Everything here is pure: same inputs give bit-identical outputs, and nothing
mutates its arguments. Matrices are plain float64 numpy arrays in row-major
order unless a function says otherwise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

WEIGHT_MAGIC = b"IMPW"
WEIGHT_VERSION = 1

# Reserved metadata tensor names in the weight file.
META_DESCRIPTOR_DIM = "meta/d"
META_HEAD_COUNT = "meta/h"
META_ITERATIONS = "meta/T"


class WeightFormatError(ValueError):
    """Raised when a weight file is malformed (magic, version, truncation, names)."""


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction.

    Rows of the result are nonnegative and sum to 1; large logits do not
    overflow because the row maximum is subtracted first.
    """
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"softmax_rows expects a 2-D matrix, got shape {m.shape}")
    if m.shape[1] == 0:
        raise ValueError("softmax_rows: empty rows are not defined")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def smallest_right_singular_vector(a: np.ndarray) -> np.ndarray:
    """Unit vector v minimizing ||a @ v||, sign-fixed.

    The sign is chosen so the entry of largest magnitude is positive, which
    makes downstream matrix comparisons well defined.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    _, _, vh = np.linalg.svd(a, full_matrices=True)
    v = vh[-1]
    return _fix_sign(v)


def _fix_sign(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    if v[k] < 0:
        return -v
    return v.copy()


def svd3(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD of a 3x3 matrix: returns (U, sigma, V) with sigma descending and m = U diag(sigma) V^T."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"svd3 expects a 3x3 matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("svd3: non-finite entries")
    u, s, vh = np.linalg.svd(m)
    return u, s, vh.T


@dataclass(frozen=True)
class MlpParams:
    """Ordered (weight, bias) layer pairs with one activation tag per layer.

    Weights are (in_dim, out_dim); layer k's out_dim must equal layer k+1's
    in_dim. Activation tags are "relu" or "linear".
    """

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        if len(self.layers) != len(self.activations):
            raise ValueError("one activation tag required per layer")
        for tag in self.activations:
            if tag not in ("relu", "linear"):
                raise ValueError(f"unknown activation {tag!r}")
        for k, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[1]:
                raise ValueError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k > 0 and self.layers[k - 1][0].shape[1] != w.shape[0]:
                raise ValueError(
                    f"layer dimensions do not chain at layer {k}: "
                    f"{self.layers[k - 1][0].shape} -> {w.shape}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[1]


def mlp_forward(p: MlpParams, x: np.ndarray) -> np.ndarray:
    """Apply the layer chain to a vector or to each row of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    vec = x.ndim == 1
    h = x[None, :] if vec else x
    if h.shape[1] != p.in_dim:
        raise ValueError(f"input dim {h.shape[1]} != first layer in-dim {p.in_dim}")
    for (w, b), tag in zip(p.layers, p.activations):
        h = h @ w + b
        if tag == "relu":
            h = np.maximum(h, 0.0)
    return h[0] if vec else h


@dataclass
class WeightStore:
    """Named tensors plus the architecture metadata (descriptor dim, heads, iterations).

    A store is usable by the attention stack only when every tensor name the
    configured architecture requires is present; otherwise it is treated as
    untrained and the pipeline falls back to raw descriptors.
    """

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    descriptor_dim: int = 0
    head_count: int = 0
    iteration_count: int = 0

    def missing_names(self) -> list[str]:
        if self.descriptor_dim <= 0 or self.iteration_count <= 0:
            return ["<architecture metadata>"]
        req = required_tensor_names(self.descriptor_dim, self.iteration_count)
        return [n for n in req if n not in self.tensors]

    @property
    def untrained(self) -> bool:
        """True when the store cannot drive the attention stack."""
        return bool(self.missing_names())

    def matrix(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise WeightFormatError(f"missing required tensor {name!r}") from None


# Layer names for one iteration block. Parameters are shared between the two
# keypoint sets; self and cross branches and the two passes each get their own.
_BRANCHES = ("self", "cross")
_FIRST_PASS = ("q", "k", "v", "proj")
_SECOND_PASS = ("v2", "proj2")
_MLP_LAYERS = 3
_ENC_LAYERS = 3


def required_tensor_names(descriptor_dim: int, iteration_count: int) -> list[str]:
    """Every tensor name the attention architecture needs for the given shape."""
    names = []
    for i in range(_ENC_LAYERS):
        names += [f"enc/l{i}/w", f"enc/l{i}/b"]
    for t in range(iteration_count):
        for branch in _BRANCHES:
            base = f"blk{t}/{branch}"
            for layer in _FIRST_PASS + _SECOND_PASS:
                names += [f"{base}/{layer}/w", f"{base}/{layer}/b"]
            for mlp in ("mlp", "mlp2"):
                for i in range(_MLP_LAYERS):
                    names += [f"{base}/{mlp}/l{i}/w", f"{base}/{mlp}/l{i}/b"]
    return names


def _tensor_shapes(descriptor_dim: int, iteration_count: int) -> dict[str, tuple[int, ...]]:
    d = descriptor_dim
    enc_widths = (3, 32, 64, d)
    mlp_widths = (2 * d, 2 * d, 2 * d, d)
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(_ENC_LAYERS):
        shapes[f"enc/l{i}/w"] = (enc_widths[i], enc_widths[i + 1])
        shapes[f"enc/l{i}/b"] = (enc_widths[i + 1],)
    for t in range(iteration_count):
        for branch in _BRANCHES:
            base = f"blk{t}/{branch}"
            for layer in _FIRST_PASS + _SECOND_PASS:
                shapes[f"{base}/{layer}/w"] = (d, d)
                shapes[f"{base}/{layer}/b"] = (d,)
            for mlp in ("mlp", "mlp2"):
                for i in range(_MLP_LAYERS):
                    shapes[f"{base}/{mlp}/l{i}/w"] = (mlp_widths[i], mlp_widths[i + 1])
                    shapes[f"{base}/{mlp}/l{i}/b"] = (mlp_widths[i + 1],)
    return shapes


def init_random_weights(descriptor_dim: int, head_count: int, iteration_count: int,
                        seed: int) -> WeightStore:
    """Architecture-complete store with seeded Gaussian weights (not trained)."""
    if descriptor_dim % head_count != 0:
        raise ValueError("descriptor dim must be divisible by head count")
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _tensor_shapes(descriptor_dim, iteration_count).items():
        if name.endswith("/b"):
            tensors[name] = np.zeros(shape, dtype=np.float64)
        else:
            scale = 1.0 / np.sqrt(shape[0])
            tensors[name] = rng.normal(0.0, scale, size=shape)
    return WeightStore(tensors, descriptor_dim, head_count, iteration_count)


def write_tensor_container(path, magic: bytes, entries: list[tuple[str, np.ndarray]]) -> None:
    """Shared little-endian container: magic, version u32, count u32; per
    tensor a u16-length UTF-8 name, u8 ndim, u32 dims, f32 row-major payload."""
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<II", WEIGHT_VERSION, len(entries)))
        for name, arr in entries:
            arr = np.asarray(arr, dtype=np.float32)
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor_container(path, magic: bytes) -> dict[str, np.ndarray]:
    """Inverse of write_tensor_container; raises WeightFormatError on bad
    magic, version mismatch, truncation, name collisions, or trailing bytes."""
    with open(path, "rb") as f:
        data = f.read()

    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise WeightFormatError(f"truncated file while reading {what}")
        chunk = data[offset:offset + n]
        offset += n
        return chunk

    if take(4, "magic") != magic:
        raise WeightFormatError(f"bad magic: not a {magic.decode()} file")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != WEIGHT_VERSION:
        raise WeightFormatError(f"unsupported version {version}")

    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1, "ndim"))
        dims = tuple(struct.unpack("<I", take(4, "dims"))[0] for _ in range(ndim))
        n_values = int(np.prod(dims)) if dims else 1
        payload = take(4 * n_values, f"payload of {name!r}")
        if name in tensors:
            raise WeightFormatError(f"name collision: {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    if offset != len(data):
        raise WeightFormatError("trailing bytes after last tensor")
    return tensors


def save_weights(store: WeightStore, path) -> None:
    """Write the store in the little-endian IMPW v1 container."""
    entries = [
        (META_DESCRIPTOR_DIM, np.asarray(float(store.descriptor_dim), dtype=np.float32)),
        (META_HEAD_COUNT, np.asarray(float(store.head_count), dtype=np.float32)),
        (META_ITERATIONS, np.asarray(float(store.iteration_count), dtype=np.float32)),
    ]
    entries += [(name, store.tensors[name]) for name in sorted(store.tensors)]
    write_tensor_container(path, WEIGHT_MAGIC, entries)


def load_weights(path) -> WeightStore:
    """Read an IMPW v1 container; raises WeightFormatError on any malformation."""
    tensors = read_tensor_container(path, WEIGHT_MAGIC)
    meta = {}
    for key in (META_DESCRIPTOR_DIM, META_HEAD_COUNT, META_ITERATIONS):
        meta[key] = float(tensors.pop(key, 0.0))
    return WeightStore(
        tensors,
        descriptor_dim=int(meta[META_DESCRIPTOR_DIM]),
        head_count=int(meta[META_HEAD_COUNT]),
        iteration_count=int(meta[META_ITERATIONS]),
    )
