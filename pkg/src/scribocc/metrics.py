"""Range-partitioned occupancy IoU and semantic mIoU."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import _kernels
from .grid import UNLABELED, LabelGrid, RangePartition, cumulative_mask


def confusion(pred: LabelGrid, gt: LabelGrid, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """(K+1) x (K+1) counts, rows = ground truth, columns = prediction.

    Voxels whose ground truth is unlabeled (255) are not counted.
    """
    if pred.spec != gt.spec:
        raise ValueError("prediction and ground truth have different grid specs")
    if (pred.codes == UNLABELED).any():
        raise ValueError("predictions must not contain the unlabeled code")
    K = max(pred.num_classes, gt.num_classes)
    keep = gt.codes != UNLABELED
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool).reshape(keep.shape)
    g = gt.codes[keep].astype(np.int64)
    p = pred.codes[keep].astype(np.int64)
    return _kernels.confusion(g, p, K + 1)


def geometric_iou(conf: np.ndarray) -> float:
    """Class-agnostic occupancy IoU in percent; 100 when neither side has occupancy."""
    tp = conf[1:, 1:].sum()
    fp = conf[0, 1:].sum()
    fn = conf[1:, 0].sum()
    denom = tp + fp + fn
    return 100.0 if denom == 0 else 100.0 * tp / denom


def per_class_iou(conf: np.ndarray):
    """Per-class IoU in percent (NaN where the class is absent from both sides)."""
    tp = np.diag(conf)[1:].astype(np.float64)
    fp = conf[:, 1:].sum(axis=0) - tp
    fn = conf[1:, :].sum(axis=1) - tp
    denom = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, 100.0 * tp / denom, np.nan)


def semantic_miou(conf: np.ndarray):
    """Mean IoU over semantic classes present in prediction or ground truth."""
    iou = per_class_iou(conf)
    present = ~np.isnan(iou)
    if not present.any():
        raise ValueError("no semantic class present; mIoU undefined")
    return float(iou[present].mean()), iou


@dataclass
class RangeReport:
    ranges: List[float]
    iou: List[float]
    miou: List[float]
    per_class: List[List[Optional[float]]]
    miou_zero_absent: List[float] = field(default_factory=list)
    ssfs: Optional[List[Optional[float]]] = None
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "ranges_m": self.ranges,
            "iou": self.iou,
            "miou": self.miou,
            "miou_absent_as_zero": self.miou_zero_absent,
            "per_class_iou": self.per_class,
            "absent_class_convention": "excluded",
            "warnings": self.warnings,
        }
        if self.ssfs is not None:
            out["ssfs"] = self.ssfs
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RangeReport":
        return cls(
            ranges=list(d["ranges_m"]),
            iou=list(d["iou"]),
            miou=list(d["miou"]),
            per_class=list(d["per_class_iou"]),
            miou_zero_absent=list(d.get("miou_absent_as_zero", [])),
            ssfs=d.get("ssfs"),
            warnings=list(d.get("warnings", [])),
        )


def ssfs_ratio(miou: float, reference_miou: float) -> Optional[float]:
    """Scribble-supervised mIoU as a percentage of the fully supervised one."""
    if reference_miou == 0:
        return None
    return 100.0 * miou / reference_miou


def range_report(pred: LabelGrid, gt: LabelGrid, part: RangePartition, reference: Optional[RangeReport] = None) -> RangeReport:
    rep = RangeReport(list(part.thresholds), [], [], [], [])
    for r in range(1, part.n_shells + 1):
        conf = confusion(pred, gt, cumulative_mask(part, pred.spec, r))
        rep.iou.append(float(geometric_iou(conf)))
        try:
            m, iou = semantic_miou(conf)
        except ValueError:
            m, iou = 0.0, per_class_iou(conf)
            rep.warnings.append(f"range {part.thresholds[r - 1]}: no semantic class present")
        rep.miou.append(m)
        rep.miou_zero_absent.append(float(np.nan_to_num(iou, nan=0.0).mean()))
        rep.per_class.append([None if np.isnan(v) else float(v) for v in iou])
    if reference is not None:
        rep.ssfs = []
        for r, (m, ref) in enumerate(zip(rep.miou, reference.miou)):
            s = ssfs_ratio(m, ref)
            if s is None:
                rep.warnings.append(f"range {rep.ranges[r]}: reference mIoU is 0, SS/FS omitted")
            rep.ssfs.append(s)
    return rep
