"""Voxel volume types, file codec, surface extraction and segmentation metrics."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LabelVolume",
    "ProbVolume",
    "VolumeError",
    "load_volume",
    "save_volume",
    "surface_voxels",
    "surface_mask",
    "dice",
    "detected",
]

PROB_TOL = 1e-5


class VolumeError(ValueError):
    """Malformed volume file or inconsistent volume data."""


@dataclass(frozen=True)
class LabelVolume:
    """Dense integer-labeled voxel grid.

    ``data`` has shape (W, H, D), dtype uint8. Label 0 is background,
    1 the organ, >= 2 mass classes. ``spacing`` is mm per voxel.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        if self.data.ndim != 3:
            raise VolumeError(f"label data must be 3-D, got shape {self.data.shape}")
        if any(s <= 0 for s in self.spacing):
            raise VolumeError(f"spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "data", np.ascontiguousarray(self.data, dtype=np.uint8))
        self.data.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def mask(self, label: int) -> np.ndarray:
        return self.data == label

    def world_coords(self, index_mask: np.ndarray) -> np.ndarray:
        """World (mm) coordinates of voxel centers selected by a boolean mask."""
        idx = np.argwhere(index_mask)
        return idx * np.asarray(self.spacing, dtype=np.float64)


@dataclass(frozen=True)
class ProbVolume:
    """Per-voxel class probability grid, shape (W, H, D, K), dtype float32."""

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        if self.data.ndim != 4:
            raise VolumeError(f"prob data must be 4-D, got shape {self.data.shape}")
        if any(s <= 0 for s in self.spacing):
            raise VolumeError(f"spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "data", np.ascontiguousarray(self.data, dtype=np.float32))
        sums = self.data.sum(axis=-1, dtype=np.float64)
        bad = np.abs(sums - 1.0) > PROB_TOL
        if bad.any():
            w, h, d = np.argwhere(bad)[0]
            raise VolumeError(
                f"probability rows must sum to 1 +- {PROB_TOL}; voxel ({w},{h},{d}) "
                f"sums to {sums[w, h, d]:.6f}"
            )
        if (self.data < 0).any():
            raise VolumeError("probability values must be non-negative")
        self.data.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    @property
    def channels(self) -> int:
        return self.data.shape[3]


def _header_path(path: str) -> tuple[str, str]:
    base, ext = os.path.splitext(path)
    if ext in (".hdr", ".raw"):
        return base + ".hdr", base + ".raw"
    return path + ".hdr", path + ".raw"


def save_volume(vol: LabelVolume | ProbVolume, path: str) -> None:
    """Write the two-file volume codec: text ``.hdr`` plus raw ``.raw`` payload.

    Payload order is w-fastest (w, then h, then d); prob volumes store K
    consecutive f32 per voxel. Little-endian throughout.
    """
    hdr_path, raw_path = _header_path(path)
    w, h, d = vol.dims
    if isinstance(vol, LabelVolume):
        kind, channels, dtype = "label", 1, "u8"
        payload = vol.data.transpose(2, 1, 0).astype("<u1").tobytes()
    else:
        kind, channels, dtype = "prob", vol.channels, "f32"
        payload = vol.data.transpose(2, 1, 0, 3).astype("<f4").tobytes()
    sx, sy, sz = vol.spacing
    with open(hdr_path, "w") as f:
        f.write(f"dims {w} {h} {d}\n")
        f.write(f"spacing {sx:.9g} {sy:.9g} {sz:.9g}\n")
        f.write(f"kind {kind}\n")
        f.write(f"channels {channels}\n")
        f.write(f"dtype {dtype}\n")
    with open(raw_path, "wb") as f:
        f.write(payload)


def load_volume(path: str) -> LabelVolume | ProbVolume:
    """Load a volume written by :func:`save_volume`."""
    hdr_path, raw_path = _header_path(path)
    fields = {}
    with open(hdr_path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            key, *rest = line.split()
            fields[key] = rest
    try:
        w, h, d = (int(v) for v in fields["dims"])
        spacing = tuple(float(v) for v in fields["spacing"])
        kind = fields["kind"][0]
        channels = int(fields["channels"][0])
        dtype = fields["dtype"][0]
    except (KeyError, ValueError, IndexError) as exc:
        raise VolumeError(f"malformed header {hdr_path}: {exc}") from exc
    if kind not in ("label", "prob") or dtype not in ("u8", "f32"):
        raise VolumeError(f"malformed header {hdr_path}: kind={kind} dtype={dtype}")
    raw = np.fromfile(raw_path, dtype="<u1" if dtype == "u8" else "<f4")
    expect = w * h * d * (channels if kind == "prob" else 1)
    if raw.size != expect:
        raise VolumeError(
            f"{raw_path}: payload has {raw.size} values, header implies {expect}"
        )
    if kind == "label":
        data = raw.reshape(d, h, w).transpose(2, 1, 0)
        return LabelVolume(data, spacing)
    data = raw.reshape(d, h, w, channels).transpose(2, 1, 0, 3)
    return ProbVolume(data, spacing)


_FACE_SHIFTS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


def surface_mask(mask: np.ndarray) -> np.ndarray:
    """Boolean mask of voxels in ``mask`` with a 6-neighbor outside the set.

    Voxels on the grid boundary count as surface.
    """
    inside = np.pad(mask, 1, constant_values=False)
    interior = np.ones_like(mask)
    for dx, dy, dz in _FACE_SHIFTS:
        interior &= inside[
            1 + dx : inside.shape[0] - 1 + dx,
            1 + dy : inside.shape[1] - 1 + dy,
            1 + dz : inside.shape[2] - 1 + dz,
        ]
    return mask & ~interior


def surface_voxels(vol: LabelVolume, label: int) -> set[tuple[int, int, int]]:
    """Voxels of the given label with at least one face-neighbor of another label."""
    surf = surface_mask(vol.mask(label))
    return {tuple(ijk) for ijk in np.argwhere(surf)}


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """Dice overlap 2|A n B| / (|A| + |B|); dice of two empty masks is 1.0."""
    if pred.shape != gt.shape:
        raise VolumeError(f"dimension mismatch: {pred.shape} vs {gt.shape}")
    a = int(np.count_nonzero(pred))
    b = int(np.count_nonzero(gt))
    if a + b == 0:
        return 1.0
    inter = int(np.count_nonzero(pred & gt))
    return 2.0 * inter / (a + b)


def detected(pred: np.ndarray, gt: np.ndarray, cutoff: float = 0.1) -> bool:
    """Detection rule: overlap with ground truth covers at least ``cutoff`` of it.

    cutoff 0 means any nonzero overlap counts.
    """
    if pred.shape != gt.shape:
        raise VolumeError(f"dimension mismatch: {pred.shape} vs {gt.shape}")
    n_gt = int(np.count_nonzero(gt))
    if n_gt == 0:
        raise VolumeError("detection rule undefined for empty ground truth")
    if not 0.0 <= cutoff <= 1.0:
        raise VolumeError(f"cutoff must be in [0, 1], got {cutoff}")
    inter = int(np.count_nonzero(pred & gt))
    if cutoff == 0.0:
        return inter > 0
    return inter / n_gt >= cutoff
