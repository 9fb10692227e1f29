"""Multi-scan accumulation, voxelization and scribble majority voting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .grid import EMPTY, UNLABELED, GridSpec, LabelGrid, points_to_voxels
from .io import LabeledPointCloud, Pose


@dataclass(frozen=True)
class AccumulationWindow:
    n_future: int = 70
    include_current: bool = True

    def __post_init__(self):
        if self.n_future < 0:
            raise ValueError("n_future must be >= 0")


def accumulate_scans(
    scans: Sequence[LabeledPointCloud],
    poses: Sequence[Pose],
    t: int,
    window: AccumulationWindow = AccumulationWindow(),
) -> LabeledPointCloud:
    """Superimpose scan ``t`` and its future scans in the world frame.

    The window is clamped at the end of the sequence.
    """
    if len(scans) != len(poses):
        raise ValueError(f"{len(scans)} scans but {len(poses)} poses")
    if not 0 <= t < len(scans):
        raise IndexError(f"frame {t} outside sequence of length {len(scans)}")
    first = t if window.include_current else t + 1
    last = min(t + window.n_future, len(scans) - 1)
    frames = range(first, last + 1)

    pts = [poses[i].apply(scans[i].points) for i in frames]
    with_labels = all(scans[i].labels is not None for i in frames)
    with_inten = all(scans[i].intensities is not None for i in frames)
    if not pts:
        return LabeledPointCloud(
            np.zeros((0, 3)),
            np.zeros(0) if with_inten else None,
            np.zeros(0, dtype=np.int64) if with_labels else None,
            frame="world",
        )
    return LabeledPointCloud(
        np.concatenate(pts),
        np.concatenate([scans[i].intensities for i in frames]) if with_inten else None,
        np.concatenate([scans[i].labels for i in frames]) if with_labels else None,
        frame="world",
    )


def voxelize_geometry(pc: LabeledPointCloud, spec: GridSpec) -> np.ndarray:
    """Boolean occupancy: a voxel is set iff some point falls in it."""
    flat, _ = points_to_voxels(pc.points, spec)
    occ = np.zeros(spec.n_voxels, dtype=bool)
    occ[flat] = True
    return occ.reshape(spec.dims)


def majority_vote(pc: LabeledPointCloud, spec: GridSpec, num_classes: int) -> LabelGrid:
    """Per-voxel label by majority over labeled points.

    Empty voxels get 0, voxels whose points are all unlabeled get 255, ties go
    to the smallest class id.
    """
    if pc.labels is None:
        raise ValueError("point cloud has no labels")
    bad = np.flatnonzero(pc.labels > num_classes)
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"point {i} has label {int(pc.labels[i])} > K={num_classes}")
    flat, inside = points_to_voxels(pc.points, spec)
    codes = _kernels.vote(flat, pc.labels[inside], spec.n_voxels, num_classes)
    return LabelGrid(spec, codes.reshape(spec.dims), num_classes)


def labeling_stats(grid: LabelGrid, reference: Optional[LabelGrid] = None) -> dict:
    """Counts of labeled / unlabeled / empty voxels, per class and overall."""
    K = grid.num_classes
    counts = np.bincount(grid.codes.ravel(), minlength=UNLABELED + 1)
    per_class = counts[1 : K + 1]
    labeled = int(per_class.sum())
    unlabeled = int(counts[UNLABELED])
    empty = int(counts[EMPTY])
    occupied = labeled + unlabeled
    out = {
        "num_classes": K,
        "per_class": {str(c): int(per_class[c - 1]) for c in range(1, K + 1)},
        "labeled": labeled,
        "unlabeled": unlabeled,
        "empty": empty,
        "labeled_fraction": labeled / occupied if occupied else 0.0,
    }
    if reference is not None:
        if reference.spec != grid.spec:
            raise ValueError("grid and reference have different specs")
        ref_counts = np.bincount(reference.codes.ravel(), minlength=UNLABELED + 1)[1 : K + 1]
        ref_labeled = int(ref_counts.sum())
        out["ratio_per_class"] = {
            str(c): (float(per_class[c - 1] / ref_counts[c - 1]) if ref_counts[c - 1] else None)
            for c in range(1, K + 1)
        }
        out["ratio"] = labeled / ref_labeled if ref_labeled else None
    return out
