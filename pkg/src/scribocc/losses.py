"""Supervised losses with analytic gradients w.r.t. per-voxel logits.

Logits are ``(N, C)`` arrays over flat voxels, channel 0 = empty and channels
1..K the semantic classes. Every loss returns a ``LossResult`` whose ``grad``
has the shape of the differentiated input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .grid import GridSpec, UNLABELED

PROB_FLOOR = 1e-12


@dataclass
class LossResult:
    value: float
    grad: np.ndarray


@dataclass
class LogitVolume:
    spec: GridSpec
    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64).reshape(self.spec.n_voxels, -1)
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("logits must be finite")

    @property
    def probs(self) -> np.ndarray:
        return softmax_probs(self.logits)


def _as_logits(O, labels=None) -> np.ndarray:
    if isinstance(O, LogitVolume):
        if labels is not None and np.size(labels) != O.spec.n_voxels:
            raise ValueError("label grid does not match logit volume")
        return O.logits
    O = np.asarray(O, dtype=np.float64)
    if labels is not None and np.size(labels) != O.shape[0]:
        raise ValueError(f"label grid has {np.size(labels)} voxels, logits {O.shape[0]}")
    return O


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, max-shifted."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        return softmax_probs(logits[None, :])[0]
    p = _kernels.softmax_rows(logits)
    if np.isnan(p).any():
        raise ValueError("NaN in logits")
    return p


def log_softmax(logits: np.ndarray) -> np.ndarray:
    return _kernels.log_softmax_rows(logits)


def partial_cross_entropy(O, S, reduction: str = "mean") -> LossResult:
    """Cross-entropy on voxels with a semantic label (S >= 1); the rest are ignored.

    ``reduction="sum"`` gives the raw per-voxel sum instead of the mean.
    """
    logits = _as_logits(O, S)
    S = np.asarray(S).ravel().astype(np.int64)
    grad = np.zeros_like(logits)
    sel = np.flatnonzero(S >= 1)
    if sel.size == 0:
        return LossResult(0.0, grad)
    lp = log_softmax(logits[sel])
    y = S[sel]
    nll = -lp[np.arange(sel.size), y]
    scale = 1.0 / sel.size if reduction == "mean" else 1.0
    g = np.exp(lp)
    g[np.arange(sel.size), y] -= 1.0
    grad[sel] = g * scale
    return LossResult(float(nll.sum() * scale), grad)


def class_weights(labels, n_channels: int, ignore_code: int = UNLABELED) -> np.ndarray:
    """Inverse log-frequency weights ``1 / log(1.02 + f_c)`` over supervised voxels."""
    labels = np.asarray(labels).ravel()
    labels = labels[labels != ignore_code].astype(np.int64)
    counts = np.bincount(labels, minlength=n_channels)[:n_channels].astype(np.float64)
    f = counts / max(counts.sum(), 1.0)
    return 1.0 / np.log(1.02 + f)


def weighted_cross_entropy(O, labels, weights: Optional[np.ndarray] = None, ignore_code: int = UNLABELED) -> LossResult:
    """Class-weighted cross-entropy; class 0 (empty) participates, ``ignore_code`` does not."""
    logits = _as_logits(O, labels)
    C = logits.shape[1]
    labels = np.asarray(labels).ravel().astype(np.int64)
    if weights is None:
        weights = class_weights(labels, C, ignore_code)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (C,):
        raise ValueError(f"weights must have length {C}")
    if (weights < 0).any():
        raise ValueError("class weights must be nonnegative")
    grad = np.zeros_like(logits)
    sel = np.flatnonzero(labels != ignore_code)
    if sel.size == 0:
        return LossResult(0.0, grad)
    y = labels[sel]
    if (y >= C).any():
        raise ValueError("label code outside logit channels")
    w = weights[y]
    denom = w.sum()
    if denom <= 0:
        return LossResult(0.0, grad)
    everything = sel.size == labels.size
    lp = log_softmax(logits if everything else logits[sel])
    nll = -lp[np.arange(sel.size), y]
    g = np.exp(lp)
    g[np.arange(sel.size), y] -= 1.0
    g *= (w / denom)[:, None]
    if everything:
        return LossResult(float((w * nll).sum() / denom), g)
    grad[sel] = g
    return LossResult(float((w * nll).sum() / denom), grad)


def scene_class_affinity_geo(O, G) -> LossResult:
    """Geometric scene-class affinity: mean negative log of occupancy precision, recall, specificity."""
    logits = _as_logits(O, G)
    G = np.asarray(G, dtype=bool).ravel()
    n_occ = int(G.sum())
    if n_occ == 0 or n_occ == G.size:
        raise ValueError("geometric affinity needs both occupied and empty voxels")
    g = G.astype(np.float64)
    p = softmax_probs(logits)
    p0 = p[:, 0]
    q = 1.0 - p0

    tp = (g * q).sum()
    sq = q.sum()
    tn = ((1 - g) * (1 - q)).sum()
    n_empty = G.size - n_occ
    prec, rec, spec = tp / max(sq, PROB_FLOOR), tp / n_occ, tn / n_empty

    dq = np.zeros_like(q)
    value = 0.0
    # d(-log ratio)/dq for each ratio; a floored ratio contributes no gradient
    if prec > PROB_FLOOR:
        value -= np.log(prec)
        dq -= g / tp - 1.0 / sq
    else:
        value -= np.log(PROB_FLOOR)
    if rec > PROB_FLOOR:
        value -= np.log(rec)
        dq -= g / tp
    else:
        value -= np.log(PROB_FLOOR)
    if spec > PROB_FLOOR:
        value -= np.log(spec)
        dq += (1 - g) / tn
    else:
        value -= np.log(PROB_FLOOR)
    value /= 3.0
    dq /= 3.0
    # q = 1 - p0 ; dp0/dl_c = p0 (delta_c0 - p_c)
    grad = (dq * p0)[:, None] * p
    grad[:, 0] -= dq * p0
    return LossResult(float(value), grad)
