"""Keypoint file I/O: a CSV text format with header u,v,c,d0..d{k-1} and a
binary IMPK container mirroring the weight-file framing."""

from __future__ import annotations

import numpy as np

from .attention import KeypointSet
from .epipolar import CameraIntrinsics
from .numerics import WeightFormatError, read_tensor_container, write_tensor_container

KEYPOINT_MAGIC = b"IMPK"


class KeypointFormatError(ValueError):
    """Malformed keypoint file; the message carries a line/field diagnostic."""


def save_keypoints_csv(kps: KeypointSet, path) -> None:
    d = kps.descriptor_dim
    header = "u,v,c," + ",".join(f"d{i}" for i in range(d))
    rows = [header]
    for i in range(kps.count):
        vals = [repr(float(kps.coords[i, 0])), repr(float(kps.coords[i, 1])),
                repr(float(kps.confidences[i]))]
        vals += [repr(float(v)) for v in kps.descriptors[i]]
        rows.append(",".join(vals))
    with open(path, "w") as f:
        f.write("\n".join(rows) + "\n")


def load_keypoints_csv(path, intrinsics: CameraIntrinsics | None = None,
                       image_size: tuple[int, int] = (640, 480)) -> KeypointSet:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines:
        raise KeypointFormatError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[:3] != ["u", "v", "c"]:
        raise KeypointFormatError(
            f"{path}:1: header must start with u,v,c (got {lines[0][:40]!r})")
    desc_cols = header[3:]
    expected = [f"d{i}" for i in range(len(desc_cols))]
    if not desc_cols or desc_cols != expected:
        raise KeypointFormatError(
            f"{path}:1: descriptor columns must be d0..d{{k-1}}, got {desc_cols[:4]}")
    width = len(header)

    coords, confs, descs = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != width:
            raise KeypointFormatError(
                f"{path}:{lineno}: expected {width} columns, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise KeypointFormatError(f"{path}:{lineno}: {exc}") from None
        coords.append(vals[:2])
        confs.append(vals[2])
        descs.append(vals[3:])
    return KeypointSet(coords=np.array(coords), confidences=np.array(confs),
                       descriptors=np.array(descs), intrinsics=intrinsics,
                       image_size=image_size)


def save_keypoints_binary(kps: KeypointSet, path) -> None:
    entries = [
        ("coords", kps.coords),
        ("confidences", kps.confidences),
        ("descriptors", kps.descriptors),
        ("image_size", np.array(kps.image_size, dtype=float)),
    ]
    if kps.intrinsics is not None:
        k = kps.intrinsics
        entries.append(("intrinsics", np.array([k.fx, k.fy, k.cx, k.cy])))
    write_tensor_container(path, KEYPOINT_MAGIC, entries)


def load_keypoints_binary(path) -> KeypointSet:
    try:
        tensors = read_tensor_container(path, KEYPOINT_MAGIC)
    except WeightFormatError as exc:
        raise KeypointFormatError(f"{path}: {exc}") from None
    for required in ("coords", "confidences", "descriptors", "image_size"):
        if required not in tensors:
            raise KeypointFormatError(f"{path}: missing tensor {required!r}")
    intr = None
    if "intrinsics" in tensors:
        fx, fy, cx, cy = tensors["intrinsics"]
        intr = CameraIntrinsics(fx=float(fx), fy=float(fy), cx=float(cx), cy=float(cy))
    w, h = tensors["image_size"]
    return KeypointSet(coords=tensors["coords"], confidences=tensors["confidences"],
                       descriptors=tensors["descriptors"], intrinsics=intr,
                       image_size=(int(w), int(h)))


def load_keypoints(path, intrinsics: CameraIntrinsics | None = None,
                   image_size: tuple[int, int] = (640, 480)) -> KeypointSet:
    """Dispatch on extension: .impk binary, anything else CSV."""
    if str(path).endswith(".impk"):
        return load_keypoints_binary(path)
    return load_keypoints_csv(path, intrinsics, image_size)
