"""Range-guided teacher-to-student distillation losses.

Per shell, class-conditional mean semantic probabilities (the "global semantic
logits", a K x K matrix) are compared with a Pearson-distance relation loss,
and per-voxel cosine affinities to those class prototypes with an MSE. All
gradients flow to the student logits only; teacher inputs are constants.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np

from .losses import LossResult, _as_logits, softmax_probs

_TINY = 1e-300


@dataclass(frozen=True)
class DistillWeights:
    w: Tuple[float, float, float] = (0.06, 0.15, 0.2)
    alpha: float = 2.625
    beta: float = 0.375
    feature_weight: float = 1.0
    total_weight: float = 1.0
    global_weight: float = 1.0
    local_weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(float(v) for v in self.w))
        vals = (*self.w, self.alpha, self.beta, self.feature_weight, self.total_weight, self.global_weight, self.local_weight)
        if any(v < 0 for v in vals):
            raise ValueError("distillation weights must be nonnegative")

    @classmethod
    def zero(cls) -> "DistillWeights":
        return cls(w=(0.0, 0.0, 0.0), feature_weight=0.0, total_weight=0.0)

    def uniform_range(self) -> "DistillWeights":
        """Same total shell weight spread evenly (no range guidance)."""
        m = sum(self.w) / len(self.w)
        return dataclasses.replace(self, w=(m,) * len(self.w))

    @property
    def active(self) -> bool:
        return self.total_weight > 0 and (self.feature_weight > 0 or any(self.w))


# -- semantic probabilities -------------------------------------------------------


def semantic_probs(logits: np.ndarray) -> np.ndarray:
    """Probabilities renormalized over the semantic channels (empty excluded)."""
    return softmax_probs(np.asarray(logits, dtype=np.float64)[:, 1:])


def _semantic_probs_backward(pt: np.ndarray, dpt: np.ndarray) -> np.ndarray:
    g = np.zeros((pt.shape[0], pt.shape[1] + 1))
    g[:, 1:] = pt * (dpt - (pt * dpt).sum(axis=1, keepdims=True))
    return g


# -- Pearson distance -------------------------------------------------------------


def pearson_distance_grad(a, b) -> Tuple[float, np.ndarray]:
    """``1 - corr(a, b)`` and its gradient w.r.t. ``a``.

    Zero-variance inputs: both constant gives 0, one constant gives 1; the
    gradient is zero in both cases.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("pearson_distance needs two vectors of equal length")
    if a.size < 2:
        raise ValueError("pearson_distance needs at least 2 entries")
    ac = a - a.mean()
    bc = b - b.mean()
    na = math.sqrt(float(ac @ ac))
    nb = math.sqrt(float(bc @ bc))
    # relative zero-variance test; absolute values only matter through the ratio
    sa = na <= 1e-14 * max(float(np.abs(a).max()), _TINY) or na == 0.0
    sb = nb <= 1e-14 * max(float(np.abs(b).max()), _TINY) or nb == 0.0
    if sa or sb:
        return (0.0 if (sa and sb) else 1.0), np.zeros_like(a)
    rho = float(ac @ bc) / (na * nb)
    rho = min(1.0, max(-1.0, rho))
    drho = bc / (na * nb) - rho * ac / (na * na)
    return 1.0 - rho, -drho


def pearson_distance(a, b) -> float:
    return pearson_distance_grad(a, b)[0]


# -- global semantic logits -------------------------------------------------------


@dataclass
class GslMatrix:
    entries: np.ndarray  # (K, K): row = scribble class, column = predicted semantic channel
    row_valid: np.ndarray
    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.entries.shape[0]


def _labeled_in_shell(S, shell_mask):
    S = np.asarray(S).ravel().astype(np.int64)
    m = np.asarray(shell_mask, dtype=bool).ravel()
    sel = np.flatnonzero(m & (S >= 1))
    return sel, S[sel] - 1


def global_semantic_logits(O, S, shell_mask) -> GslMatrix:
    logits = _as_logits(O, S)
    K = logits.shape[1] - 1
    sel, rows = _labeled_in_shell(S, shell_mask)
    counts = np.bincount(rows, minlength=K)[:K]
    entries = np.zeros((K, K))
    if sel.size:
        np.add.at(entries, rows, semantic_probs(logits[sel]))
    valid = counts > 0
    entries[valid] /= counts[valid, None]
    return GslMatrix(entries, valid, counts)


def _gsl_backward(d_entries, S, shell_mask, logits, counts):
    """Gradient on the semantic probabilities of the voxels behind each GSL row."""
    sel, rows = _labeled_in_shell(S, shell_mask)
    scale = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)
    return sel, d_entries[rows] * scale[rows, None]


def global_relation_loss(o_S: GslMatrix, o_T: GslMatrix, alpha: float = 2.625, beta: float = 0.375) -> LossResult:
    """Inter-class (row) plus intra-class (column) Pearson relation loss.

    ``grad`` is w.r.t. ``o_S.entries``. Rows valid in only one matrix are
    dropped; the count is stored on the result as ``dropped``.
    """
    K = o_S.num_classes
    valid = o_S.row_valid & o_T.row_valid
    grad = np.zeros((K, K))
    value = 0.0
    rows = np.flatnonzero(valid)
    if alpha:
        for i in rows:
            d, g = pearson_distance_grad(o_S.entries[i], o_T.entries[i])
            value += alpha * d
            grad[i] += alpha * g
    if beta and rows.size >= 2:
        for j in range(K):
            d, g = pearson_distance_grad(o_S.entries[rows, j], o_T.entries[rows, j])
            value += beta * d
            grad[rows, j] += beta * g
    res = LossResult(value / K, grad / K)
    res.dropped = int((o_S.row_valid ^ o_T.row_valid).sum())
    return res


def global_distill(logits_S, logits_T, S, shell_mask, alpha=2.625, beta=0.375) -> LossResult:
    """Global relation loss for one shell with the gradient taken to the student logits."""
    logits_S = _as_logits(logits_S, S)
    logits_T = _as_logits(logits_T, S)
    gS = global_semantic_logits(logits_S, S, shell_mask)
    gT = global_semantic_logits(logits_T, S, shell_mask)
    res = global_relation_loss(gS, gT, alpha, beta)
    grad = np.zeros_like(logits_S)
    if res.value or np.any(res.grad):
        sel, dpt = _gsl_backward(res.grad, S, shell_mask, logits_S, gS.counts)
        grad[sel] = _semantic_probs_backward(semantic_probs(logits_S[sel]), dpt)
    out = LossResult(res.value, grad)
    out.dropped = res.dropped
    return out


# -- local semantic affinity ------------------------------------------------------


@dataclass
class AffinityMap:
    values: np.ndarray  # (N_r, K) cosine similarities, masked columns zero
    col_valid: np.ndarray  # prototype rows that exist
    voxels: np.ndarray  # flat indices of the shell voxels


def _unit_rows(M):
    n = np.sqrt((M * M).sum(axis=1, keepdims=True))
    return M / np.maximum(n, _TINY), n


def local_semantic_affinity(O, gsl: GslMatrix, shell_mask) -> AffinityMap:
    logits = _as_logits(O)
    vox = np.flatnonzero(np.asarray(shell_mask, dtype=bool).ravel())
    U, _ = _unit_rows(semantic_probs(logits[vox]))
    Gn, _ = _unit_rows(gsl.entries)
    A = U @ Gn.T
    A[:, ~gsl.row_valid] = 0.0
    return AffinityMap(A, gsl.row_valid.copy(), vox)


def local_affinity_loss(A_S: AffinityMap, A_T: AffinityMap) -> LossResult:
    """Mean squared difference over unmasked entries; ``grad`` is w.r.t. ``A_S.values``."""
    if A_S.values.shape != A_T.values.shape or not np.array_equal(A_S.col_valid, A_T.col_valid):
        raise ValueError("affinity maps differ in shape or mask")
    if not np.array_equal(A_S.voxels, A_T.voxels):
        raise ValueError("affinity maps cover different voxels")
    cols = A_S.col_valid
    n = A_S.values.shape[0] * int(cols.sum())
    grad = np.zeros_like(A_S.values)
    if n == 0:
        return LossResult(0.0, grad)
    diff = (A_S.values - A_T.values)[:, cols]
    grad[:, cols] = 2.0 * diff / n
    return LossResult(float((diff * diff).sum() / n), grad)


def local_distill(logits_S, logits_T, S, shell_mask) -> LossResult:
    """Local affinity loss for one shell with the gradient taken to the student logits.

    The student affinity depends on the student logits twice: through each
    voxel's own probabilities and through the student prototypes.
    """
    logits_S = _as_logits(logits_S, S)
    logits_T = _as_logits(logits_T, S)
    gS = global_semantic_logits(logits_S, S, shell_mask)
    gT = global_semantic_logits(logits_T, S, shell_mask)
    valid = gS.row_valid & gT.row_valid
    gS.row_valid = gT.row_valid = valid
    A_S = local_semantic_affinity(logits_S, gS, shell_mask)
    A_T = local_semantic_affinity(logits_T, gT, shell_mask)
    res = local_affinity_loss(A_S, A_T)
    grad = np.zeros_like(logits_S)
    if not np.any(res.grad):
        return LossResult(res.value, grad)

    vox = A_S.voxels
    pt = semantic_probs(logits_S[vox])
    U, nu = _unit_rows(pt)
    Gn, ng = _unit_rows(gS.entries)
    dA = res.grad
    dU = dA @ Gn
    dG = dA.T @ U
    dpt = (dU - U * (dU * U).sum(axis=1, keepdims=True)) / np.maximum(nu, _TINY)
    dgsl = (dG - Gn * (dG * Gn).sum(axis=1, keepdims=True)) / np.maximum(ng, _TINY)
    dgsl[~valid] = 0.0

    dpt_full = np.zeros((logits_S.shape[0], pt.shape[1]))
    dpt_full[vox] = dpt
    sel, d_from_gsl = _gsl_backward(dgsl, S, shell_mask, logits_S, gS.counts)
    np.add.at(dpt_full, sel, d_from_gsl)
    touched = np.union1d(vox, sel)
    grad[touched] = _semantic_probs_backward(semantic_probs(logits_S[touched]), dpt_full[touched])
    return LossResult(res.value, grad)


# -- feature distillation and composition ----------------------------------------


def feature_mse(F_S, F_T) -> LossResult:
    """Mean squared feature difference; float32 inputs keep a float32 gradient."""
    F_S = np.asarray(F_S)
    F_T = np.asarray(F_T)
    if F_S.shape != F_T.shape:
        raise ValueError(f"feature shapes differ: {F_S.shape} vs {F_T.shape}")
    if F_S.size == 0:
        return LossResult(0.0, np.zeros(F_S.shape))
    d = (F_S - F_T).ravel()
    if d.dtype != np.float32:
        d = d.astype(np.float64, copy=False)
    d64 = d.astype(np.float64, copy=False)
    value = float(d64 @ d64) / d.size
    return LossResult(value, (d * (2.0 / d.size)).reshape(F_S.shape))


def compose_distill(feat: float, global_r: Sequence[float], local_r: Sequence[float], w: DistillWeights = DistillWeights()) -> float:
    """Feature term plus range-weighted global and local shell terms."""
    vals = (feat, *global_r, *local_r)
    if any(v < 0 for v in vals):
        raise ValueError("distillation terms must be nonnegative")
    if not len(global_r) == len(local_r) == len(w.w):
        raise ValueError("one global and one local term per shell required")
    terms = [w.feature_weight * feat]
    for wr, g, l in zip(w.w, global_r, local_r):
        terms.append(wr * (w.global_weight * g))
        terms.append(wr * (w.local_weight * l))
    return math.fsum(terms)


def gradcheck(f: Callable[[np.ndarray], Tuple[float, np.ndarray]], x0, eps: float = 1e-5) -> float:
    """Max component-wise relative error between ``f``'s gradient and central differences.

    ``f`` maps a flat vector to ``(value, grad)``.
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    x0 = np.array(x0, dtype=np.float64).ravel()
    v0, g = f(x0)
    g = np.asarray(g, dtype=np.float64).ravel()
    if not np.isfinite(v0) or not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite loss or gradient at x0")
    worst = 0.0
    x = x0.copy()
    for i in range(x0.size):
        x[i] = x0[i] + eps
        fp = f(x)[0]
        x[i] = x0[i] - eps
        fm = f(x)[0]
        x[i] = x0[i]
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite loss at probe {i}")
        num = (fp - fm) / (2 * eps)
        err = abs(g[i] - num) / max(abs(g[i]), abs(num), 1e-8)
        worst = max(worst, err)
    return worst


# -- batched form used in training -------------------------------------------------


class RangeDistiller:
    """All per-shell global and local terms against a fixed teacher, in one pass.

    Teacher prototypes and affinities are computed once at construction; each
    call evaluates the student's semantic probabilities once and shares them
    across shells. Values match ``global_distill`` / ``local_distill``.
    """

    def __init__(self, teacher_logits, S, shells, n_shells: int = 3):
        S = np.asarray(S).ravel().astype(np.int64)
        shells = np.asarray(shells).ravel()
        ptT = semantic_probs(teacher_logits)
        UT, _ = _unit_rows(ptT)
        self.K = ptT.shape[1]
        self.parts = []
        for r in range(1, n_shells + 1):
            mask = shells == r
            vox = np.flatnonzero(mask)
            sel = np.flatnonzero(mask & (S >= 1))
            rows = S[sel] - 1
            counts = np.bincount(rows, minlength=self.K)[: self.K]
            valid = counts > 0
            avg = np.zeros((sel.size, self.K))
            avg[np.arange(sel.size), rows] = 1.0 / counts[rows] if sel.size else 0.0
            gT = GslMatrix(avg.T @ ptT[sel], valid, counts)
            GnT, _ = _unit_rows(gT.entries)
            A_T = UT[vox] @ GnT.T
            A_T[:, ~valid] = 0.0
            self.parts.append(dict(vox=vox, sel=sel, avg=avg, gT=gT, A_T=A_T))

    def __call__(self, logits, alpha=2.625, beta=0.375, global_coef=(1.0, 1.0, 1.0), local_coef=(1.0, 1.0, 1.0)):
        """Per-shell values and the gradient of ``sum_r g_r*global_r + l_r*local_r``.

        A zero coefficient skips that term (its value is reported as 0).
        """
        pt = semantic_probs(logits)
        U, nu = _unit_rows(pt)
        dpt = np.zeros_like(pt)
        g_vals, l_vals = [], []
        for part, gc, lc in zip(self.parts, global_coef, local_coef):
            sel, vox, avg, gT = part["sel"], part["vox"], part["avg"], part["gT"]
            gS = GslMatrix(avg.T @ pt[sel], gT.row_valid, gT.counts)
            valid = gT.row_valid
            if gc:
                res = global_relation_loss(gS, gT, alpha, beta)
                g_vals.append(res.value)
                dpt[sel] += gc * (avg @ res.grad)
            else:
                g_vals.append(0.0)
            n = vox.size * int(valid.sum())
            if lc and n:
                Gn, ng = _unit_rows(gS.entries)
                Uv = U[vox]
                diff = Uv @ Gn.T - part["A_T"]
                diff[:, ~valid] = 0.0
                l_vals.append(float((diff * diff).sum() / n))
                dA = (2.0 * lc / n) * diff
                dU = dA @ Gn
                dG = dA.T @ Uv
                dpt[vox] += (dU - Uv * (dU * Uv).sum(axis=1, keepdims=True)) / np.maximum(nu[vox], _TINY)
                dgsl = (dG - Gn * (dG * Gn).sum(axis=1, keepdims=True)) / np.maximum(ng, _TINY)
                dgsl[~valid] = 0.0
                dpt[sel] += avg @ dgsl
            else:
                l_vals.append(0.0)
        return g_vals, l_vals, _semantic_probs_backward(pt, dpt)
