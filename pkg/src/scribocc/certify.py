"""Finite-difference certification of every analytic gradient in the package.

Each check builds a small random problem, wraps the loss as ``flat -> (value,
grad)`` and hands it to ``distill.gradcheck``. Used by the ``gradcheck`` CLI
command and the test suite.
"""

from __future__ import annotations

from typing import Callable, Dict, Tuple

import numpy as np

from . import distill as D
from . import losses as L
from .grid import GridSpec, LabelGrid, RangePartition, shell_ids
from .model import ToyModel, backward, forward, n_features

TOLERANCE = 1e-4


def _pair(res) -> Tuple[float, np.ndarray]:
    return res.value, res.grad


def _random_problem(dims, num_classes: int, seed: int):
    rs = np.random.default_rng(seed)
    n = int(np.prod(dims))
    C = num_classes + 1
    logits = rs.normal(size=(n, C))
    teacher = rs.normal(size=(n, C))
    # every voxel class present at least once keeps the GSL rows populated
    S = rs.integers(0, C, n)
    S[:C] = np.arange(C)
    G = rs.random(n) < 0.5
    G[0], G[1] = True, False
    return rs, logits, teacher, S, G


def loss_checks(dims=(4, 4, 3), num_classes: int = 4, seed: int = 0) -> Dict[str, Callable]:
    """Losses differentiated w.r.t. their direct inputs."""
    rs, O, T, S, G = _random_problem(dims, num_classes, seed)
    n, C = O.shape
    K = C - 1
    mask = rs.random(n) < 0.7
    mask[:C] = True
    weights = rs.uniform(0.5, 2.0, C)
    gT = D.global_semantic_logits(T, S, mask)
    gS = D.global_semantic_logits(O, S, mask)
    A_T = D.local_semantic_affinity(T, gT, mask)
    F_T = rs.normal(size=(n, 6))

    def relation(x):
        g = D.GslMatrix(x.reshape(K, K), gS.row_valid, gS.counts)
        return _pair(D.global_relation_loss(g, gT))

    def affinity(x):
        a = D.AffinityMap(x.reshape(A_T.values.shape), A_T.col_valid, A_T.voxels)
        return _pair(D.local_affinity_loss(a, A_T))

    A_S0 = D.local_semantic_affinity(O, D.GslMatrix(gS.entries, gT.row_valid, gS.counts), mask).values
    return {
        "partial_cross_entropy": (lambda x: _pair(L.partial_cross_entropy(x.reshape(n, C), S)), O),
        "weighted_cross_entropy": (lambda x: _pair(L.weighted_cross_entropy(x.reshape(n, C), S, weights)), O),
        "scene_class_affinity_geo": (lambda x: _pair(L.scene_class_affinity_geo(x.reshape(n, C), G)), O),
        "global_relation_loss": (relation, gS.entries),
        "local_affinity_loss": (affinity, A_S0),
        "feature_mse": (lambda x: _pair(D.feature_mse(x.reshape(F_T.shape), F_T)), rs.normal(size=F_T.shape)),
        "global_distill": (lambda x: _pair(D.global_distill(x.reshape(n, C), T, S, mask)), O),
        "local_distill": (lambda x: _pair(D.local_distill(x.reshape(n, C), T, S, mask)), O),
    }


def composite_check(dims=(6, 6, 4), num_classes: int = 4, seed: int = 0, hidden: int = 5):
    """The full student objective (sem + geo + distill) through the toy model parameters."""
    from .pipeline import Inputs, Teacher, TrainConfig, student_objective

    rs, _, _, S, G = _random_problem(dims, num_classes, seed)
    n = S.size
    K = num_classes
    spec = GridSpec(tuple(dims), 0.2, (0.0, -dims[1] * 0.1, -2.0))
    cfg = TrainConfig(hidden=hidden)
    feats = rs.normal(size=(n, n_features(K)))
    tmodel = ToyModel.init(feats.shape[1], K + 1, hidden, seed=seed + 1).freeze()
    t_logits, t_hidden, _ = forward(tmodel, feats)
    teacher = Teacher(tmodel, t_logits, t_hidden, [])
    scrib = np.where(G, S, 0)
    scrib[rs.random(n) < 0.5] = 0
    scrib[: K + 1] = np.arange(K + 1)
    pseudo = np.where(G, np.maximum(S, 1), 0)
    part = RangePartition.for_spec(spec)
    inputs = Inputs(
        scene=None,
        scribbles=LabelGrid(spec, scrib.astype(np.uint16), K),
        G=G.reshape(dims),
        G_noisy=G.reshape(dims),
        feats_geometry=feats,
        feats_clean=feats,
        feats_noisy=feats,
        shells=shell_ids(part, spec).ravel(),
    )
    objective = student_objective(inputs, LabelGrid(spec, pseudo.astype(np.uint16), K), teacher, cfg.distill, cfg)
    model = ToyModel.init(feats.shape[1], K + 1, hidden, seed=seed)

    def f(x):
        m = model.with_flat(x)
        logits, h, pre = forward(m, feats)
        value, d_logits, d_hidden = objective(logits, h)
        grads = backward(m, feats, h, pre, d_logits, d_hidden)
        return value, np.concatenate([grads[k].ravel() for k in m.params])

    return f, model.flat()


def run_all(dims=(4, 4, 3), eps: float = 1e-5, seed: int = 0, composite_dims=(6, 6, 4)) -> Dict[str, float]:
    """Worst relative error per check."""
    out = {}
    for name, (f, x0) in loss_checks(dims, seed=seed).items():
        out[name] = D.gradcheck(f, np.ravel(x0), eps)
    f, x0 = composite_check(composite_dims, seed=seed)
    out["composite_objective"] = D.gradcheck(f, x0, eps)
    return out
