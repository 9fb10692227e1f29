"""Voxel volume geometry, label codes and range partitions.

Grids are stored as C-ordered ``(X, Y, Z)`` numpy arrays, so the flat index of
voxel ``(x, y, z)`` is ``(x * Y + y) * Z + z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

EMPTY = 0
UNLABELED = 255
CODE_DTYPE = np.uint16


@dataclass(frozen=True)
class GridSpec:
    dims: Tuple[int, int, int] = (256, 256, 32)
    voxel_size: float = 0.2
    origin: Tuple[float, float, float] = (0.0, -25.6, -2.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be > 0, got {self.voxel_size}")
        if len(self.origin) != 3:
            raise ValueError("origin must have three components")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @classmethod
    def desk(cls) -> "GridSpec":
        """64 x 64 x 16 volume at 0.2 m, laterally centred on the ego like the default."""
        return cls((64, 64, 16), 0.2, (0.0, -6.4, -2.0))

    @property
    def n_voxels(self) -> int:
        X, Y, Z = self.dims
        return X * Y * Z

    @property
    def extent(self) -> Tuple[float, float, float]:
        return tuple(d * self.voxel_size for d in self.dims)

    def flat_index(self, idx) -> int:
        x, y, z = idx
        X, Y, Z = self.dims
        return (x * Y + y) * Z + z

    def contains(self, idx) -> bool:
        return all(0 <= int(i) < d for i, d in zip(idx, self.dims))

    def voxel_to_world_center(self, idx) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(idx, dtype=np.float64) + 0.5) * self.voxel_size

    def centers(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-axis world coordinates of voxel centres."""
        return tuple(
            o + (np.arange(d) + 0.5) * self.voxel_size for o, d in zip(self.origin, self.dims)
        )


def world_to_voxel(p, spec: GridSpec) -> Optional[Tuple[int, int, int]]:
    """Voxel containing world point ``p``, or None when it falls outside the volume."""
    rel = (np.asarray(p, dtype=np.float64) - np.asarray(spec.origin)) / spec.voxel_size
    idx = np.floor(rel)
    if np.any(idx < 0) or np.any(idx >= np.asarray(spec.dims)):
        return None
    return tuple(int(i) for i in idx)


def points_to_voxels(points: np.ndarray, spec: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised ``world_to_voxel``.

    Returns ``(flat, inside)``: flat voxel indices for the in-bounds points and
    the boolean mask selecting them from ``points``.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    idx = np.floor((points - np.asarray(spec.origin)) / spec.voxel_size)
    dims = np.asarray(spec.dims)
    inside = np.all((idx >= 0) & (idx < dims), axis=1)
    ijk = idx[inside].astype(np.int64)
    X, Y, Z = spec.dims
    flat = (ijk[:, 0] * Y + ijk[:, 1]) * Z + ijk[:, 2]
    return flat, inside


@dataclass(frozen=True)
class LabelGrid:
    """Dense per-voxel codes: 0 empty, 1..K class, 255 unlabeled."""

    spec: GridSpec
    codes: np.ndarray
    num_classes: int = 19

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.size != self.spec.n_voxels:
            raise ValueError(f"expected {self.spec.n_voxels} codes, got {codes.size}")
        codes = np.ascontiguousarray(codes, dtype=CODE_DTYPE).reshape(self.spec.dims)
        if not 1 <= self.num_classes < UNLABELED:
            raise ValueError(f"num_classes must be in [1, 254], got {self.num_classes}")
        bad = (codes > self.num_classes) & (codes != UNLABELED)
        if bad.any():
            raise ValueError(f"invalid voxel code {int(codes[bad][0])} for K={self.num_classes}")
        codes.flags.writeable = False
        object.__setattr__(self, "codes", codes)

    def __eq__(self, other):
        if not isinstance(other, LabelGrid):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.num_classes == other.num_classes
            and np.array_equal(self.codes, other.codes)
        )

    @property
    def geometry(self) -> np.ndarray:
        return self.codes != EMPTY

    @property
    def semantics(self) -> np.ndarray:
        return np.where(self.codes == UNLABELED, 0, self.codes).astype(CODE_DTYPE)


def split_grid(grid: LabelGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Geometric occupancy G and sparse semantics S of a label grid."""
    return grid.geometry, grid.semantics


def merge_grid(G: np.ndarray, S: np.ndarray, spec: GridSpec, num_classes: int) -> LabelGrid:
    """Inverse of ``split_grid``: occupied voxels without a class become unlabeled."""
    G = np.asarray(G, dtype=bool)
    codes = np.where(G, np.where(S == 0, UNLABELED, S), EMPTY)
    return LabelGrid(spec, codes.astype(CODE_DTYPE), num_classes)


@dataclass(frozen=True)
class RangePartition:
    thresholds: Tuple[float, ...] = (12.8, 25.6, 51.2)
    ego: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        t = tuple(float(v) for v in self.thresholds)
        if len(t) < 1 or any(b <= a for a, b in zip(t, t[1:])) or t[0] <= 0:
            raise ValueError(f"thresholds must be positive and strictly ascending, got {t}")
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "ego", tuple(float(v) for v in self.ego))

    @classmethod
    def for_spec(cls, spec: GridSpec, fractions: Sequence[float] = (0.25, 0.5, 1.0)):
        """Partition scaled to a grid: thresholds are fractions of the forward extent.

        The ego sits on the rear face of the volume at lateral centre, so the
        default spec reproduces (12.8, 25.6, 51.2) around (0, 0, 0).
        """
        ex, ey, _ = spec.extent
        ego = (spec.origin[0], spec.origin[1] + ey / 2, 0.0)
        return cls(tuple(f * ex for f in fractions), ego)

    @property
    def n_shells(self) -> int:
        return len(self.thresholds)


def shell_ids(part: RangePartition, spec: GridSpec) -> np.ndarray:
    """Shell id (1-based) of every voxel as an ``(X, Y, Z)`` int8 array.

    Voxels beyond the last box are clamped into the last shell so that the
    outermost cumulative mask always spans the whole grid.
    """
    cx, cy, _ = spec.centers()
    fwd = cx - part.ego[0]
    lat = np.abs(cy - part.ego[1])
    out = np.full(spec.dims[:2], part.n_shells, dtype=np.int8)
    for r in range(part.n_shells, 0, -1):
        t = part.thresholds[r - 1]
        inside = (fwd[:, None] < t) & (lat[None, :] < t / 2)
        out[inside] = r
    return np.repeat(out[:, :, None], spec.dims[2], axis=2)


def shell_of(idx, part: RangePartition, spec: GridSpec) -> int:
    if len(idx) != 3 or not spec.contains(idx):
        raise IndexError(f"voxel index {tuple(idx)} outside grid {spec.dims}")
    cx, cy, _ = spec.voxel_to_world_center(idx)
    fwd = cx - part.ego[0]
    lat = abs(cy - part.ego[1])
    for r, t in enumerate(part.thresholds, start=1):
        if fwd < t and lat < t / 2:
            return r
    return part.n_shells


def shell_mask(part: RangePartition, spec: GridSpec, r: int) -> np.ndarray:
    """Voxels of the disjoint shell ``r``."""
    _check_shell(part, r)
    return shell_ids(part, spec) == r


def cumulative_mask(part: RangePartition, spec: GridSpec, r: int) -> np.ndarray:
    """Voxels of shells 1..r (the nested evaluation sub-volume)."""
    _check_shell(part, r)
    return shell_ids(part, spec) <= r


def _check_shell(part: RangePartition, r: int):
    if not 1 <= int(r) <= part.n_shells:
        raise ValueError(f"shell id must be in [1, {part.n_shells}], got {r}")
