"""Readers and writers for KITTI-style scans/labels/poses, ``.sscv`` grids and JSON reports."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .grid import GridSpec, LabelGrid, UNLABELED

log = logging.getLogger(__name__)

MAGIC = b"SSCV"
VERSION = 1
_HEADER = struct.Struct("<4sB3Id3d")


class FormatError(ValueError):
    """Malformed input bytes or text. ``where`` holds a byte offset or a 1-based line."""

    def __init__(self, message: str, where: Optional[int] = None):
        super().__init__(message)
        self.where = where


@dataclass
class LabeledPointCloud:
    points: np.ndarray
    intensities: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    frame: str = "sensor"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        if self.intensities is not None:
            self.intensities = np.asarray(self.intensities, dtype=np.float64)
            if self.intensities.shape != (n,):
                raise ValueError("intensities length differs from points")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError("labels length differs from points")
            if (self.labels < 0).any():
                raise ValueError("labels must be >= 0")

    def __len__(self):
        return len(self.points)


@dataclass
class Pose:
    """3x4 sensor-to-world rigid transform."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64).reshape(3, 4)
        R = self.matrix[:, :3]
        err = np.abs(R @ R.T - np.eye(3)).max()
        if err > 1e-3:
            log.warning("pose rotation block is not orthonormal (max deviation %.3g)", err)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.hstack([np.eye(3), np.zeros((3, 1))]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.matrix[:, :3].T + self.matrix[:, 3]

    def inverse(self) -> "Pose":
        R, t = self.matrix[:, :3], self.matrix[:, 3]
        return Pose(np.hstack([R.T, (-R.T @ t)[:, None]]))

    def compose(self, other: "Pose") -> "Pose":
        """``self`` after ``other``: points go through ``other`` first."""
        R = self.matrix[:, :3] @ other.matrix[:, :3]
        t = self.matrix[:, :3] @ other.matrix[:, 3] + self.matrix[:, 3]
        return Pose(np.hstack([R, t[:, None]]))


# -- KITTI formats ----------------------------------------------------------------


def read_scan(data: bytes) -> LabeledPointCloud:
    """Parse a velodyne ``.bin`` buffer of little-endian float32 (x, y, z, intensity)."""
    if len(data) % 16:
        raise FormatError(
            f"scan length {len(data)} is not a multiple of 16; trailing record at offset "
            f"{len(data) - len(data) % 16}",
            where=len(data) - len(data) % 16,
        )
    rec = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    return LabeledPointCloud(rec[:, :3], rec[:, 3], None, frame="sensor")


def write_scan(pc: LabeledPointCloud) -> bytes:
    inten = pc.intensities if pc.intensities is not None else np.zeros(len(pc))
    rec = np.column_stack([pc.points, inten]).astype("<f4")
    return rec.tobytes()


def read_point_labels(data: bytes, n_points: int, label_map: Optional[Dict[int, int]] = None) -> np.ndarray:
    """Per-point class ids from a ``.label`` buffer (low 16 bits, remapped)."""
    if len(data) != 4 * n_points:
        raise FormatError(
            f"label buffer has {len(data)} bytes, expected {4 * n_points} for {n_points} points",
            where=min(len(data), 4 * n_points),
        )
    raw = np.frombuffer(data, dtype="<u4") & 0xFFFF
    raw = raw.astype(np.int64)
    if label_map is None:
        return raw
    lut = np.zeros(max(max(label_map, default=0), int(raw.max(initial=0))) + 1, dtype=np.int64)
    for src, dst in label_map.items():
        lut[src] = dst
    return lut[raw]


def write_point_labels(labels: np.ndarray, instances: Optional[np.ndarray] = None) -> bytes:
    labels = np.asarray(labels, dtype=np.uint32) & 0xFFFF
    if instances is not None:
        labels = labels | (np.asarray(instances, dtype=np.uint32) << 16)
    return labels.astype("<u4").tobytes()


def read_label_map(text: str) -> Dict[int, int]:
    """Parse ``raw_id target_id`` lines; blank lines and ``#`` comments skipped."""
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 2:
            raise FormatError(f"label map line {n}: expected 2 fields, got {len(tok)}", where=n)
        try:
            src, dst = int(tok[0]), int(tok[1])
        except ValueError:
            raise FormatError(f"label map line {n}: non-integer id", where=n) from None
        if src < 0 or src > 0xFFFF or dst < 0:
            raise FormatError(f"label map line {n}: id out of range", where=n)
        out[src] = dst
    return out


def read_poses(text: str) -> List[Pose]:
    poses = []
    for n, line in enumerate(text.splitlines(), start=1):
        tok = line.split()
        if not tok:
            continue
        if len(tok) != 12:
            raise FormatError(f"poses line {n}: expected 12 values, got {len(tok)}", where=n)
        try:
            vals = [float(t) for t in tok]
        except ValueError:
            raise FormatError(f"poses line {n}: non-numeric value", where=n) from None
        if not np.all(np.isfinite(vals)):
            raise FormatError(f"poses line {n}: non-finite value", where=n)
        poses.append(Pose(np.array(vals)))
    return poses


def write_poses(poses: List[Pose]) -> str:
    return "".join(" ".join(repr(float(v)) for v in p.matrix.ravel()) + "\n" for p in poses)


# -- voxel grids ------------------------------------------------------------------


def write_grid(grid: LabelGrid) -> bytes:
    s = grid.spec
    head = _HEADER.pack(MAGIC, VERSION, *s.dims, s.voxel_size, *s.origin)
    return head + grid.codes.astype("<u2").tobytes()


def read_grid(data: bytes, num_classes: Optional[int] = None) -> LabelGrid:
    """Parse ``.sscv`` bytes.

    ``num_classes`` defaults to 19, or the largest class code present if that
    is higher.
    """
    if len(data) < _HEADER.size:
        raise FormatError(f"grid header truncated at {len(data)} bytes", where=len(data))
    magic, version, X, Y, Z, size, ox, oy, oz = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", where=0)
    if version != VERSION:
        raise FormatError(f"unsupported grid version {version}", where=4)
    try:
        spec = GridSpec((X, Y, Z), size, (ox, oy, oz))
    except ValueError as e:
        raise FormatError(f"invalid grid header: {e}", where=5) from None
    if not all(np.isfinite((size, ox, oy, oz))):
        raise FormatError("non-finite grid header value", where=17)
    need = _HEADER.size + 2 * spec.n_voxels
    if len(data) != need:
        raise FormatError(f"grid payload has {len(data)} bytes, expected {need}", where=min(len(data), need))
    codes = np.frombuffer(data, dtype="<u2", offset=_HEADER.size)
    present = codes[codes != UNLABELED]
    top = int(present.max(initial=0))
    if num_classes is None:
        num_classes = max(19, top)
    if top > num_classes or top >= UNLABELED:
        raise FormatError(f"voxel code {top} exceeds class count {num_classes}", where=_HEADER.size)
    return LabelGrid(spec, codes.reshape(spec.dims), num_classes)


def save_grid(path, grid: LabelGrid):
    Path(path).write_bytes(write_grid(grid))


def load_grid(path, num_classes: Optional[int] = None) -> LabelGrid:
    return read_grid(Path(path).read_bytes(), num_classes)


# -- JSON reports ----------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_report(obj) -> str:
    """Stable JSON text: two-space indent, sorted keys, trailing newline."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_report(path, obj):
    Path(path).write_text(dumps_report(obj), encoding="utf-8")
