"""Per-voxel two-layer network used by every training stage."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy.ndimage import uniform_filter

from . import rng

# (x, y, z) box sizes of the occupancy-density context channels
CONTEXT_BOXES = ((5, 5, 1), (9, 9, 1), (15, 15, 1), (3, 3, 7))
N_CONTEXT = len(CONTEXT_BOXES) + 3


def geometry_context(G: np.ndarray) -> np.ndarray:
    """Wider-than-neighbourhood shape descriptors, ``(N, N_CONTEXT)``.

    Box-mean occupancy at several footprints, then per-column occupied
    fraction, normalized top height, and depth below the column top.
    """
    X, Y, Z = G.shape
    occ = G.astype(np.float64)
    cols = [uniform_filter(occ, size=b, mode="constant").ravel() for b in CONTEXT_BOXES]
    z = np.arange(Z)
    any_occ = G.any(axis=2)
    top = np.where(any_occ, (Z - 1) - np.argmax(G[:, :, ::-1], axis=2), -1)
    cols.append(np.broadcast_to(occ.mean(axis=2)[..., None], G.shape).ravel())
    cols.append(np.broadcast_to(((top + 1) / Z)[..., None], G.shape).ravel())
    cols.append(np.clip((top[..., None] - z) / Z, 0.0, None).ravel())
    return np.column_stack(cols)


def voxel_features(geometry: np.ndarray, hints: np.ndarray, use_hints: bool = True) -> np.ndarray:
    """Per-voxel inputs: 3x3x3 occupancy neighbourhood, geometric context
    (``geometry_context``), normalized coordinates, hint one-hot.

    ``hints`` is the ``(X, Y, Z, K + 1)`` hint volume from scene synthesis;
    its semantic channels are kept only where the input geometry is occupied,
    and zeroed entirely with ``use_hints=False`` (geometry-only input).
    Returns an ``(N, n_features(K))`` float64 array in flat voxel order.
    """
    G = np.asarray(geometry, dtype=bool)
    X, Y, Z = G.shape
    pad = np.pad(G, 1).astype(np.float64)
    cols = []
    for dx in range(3):
        for dy in range(3):
            for dz in range(3):
                cols.append(pad[dx : dx + X, dy : dy + Y, dz : dz + Z].ravel())
    gx, gy, gz = np.meshgrid(np.arange(X) / X, np.arange(Y) / Y, np.arange(Z) / Z, indexing="ij")
    cols += list(geometry_context(G).T)
    cols += [gx.ravel(), gy.ravel(), gz.ravel()]
    sem = np.asarray(hints, dtype=np.float64)[..., 1:].reshape(G.size, -1) * G.reshape(-1, 1)
    if not use_hints:
        sem = np.zeros_like(sem)
    return np.column_stack(cols + [sem])


def standardize(feats: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance columns; constant columns are only centred."""
    mu = feats.mean(axis=0)
    sd = feats.std(axis=0)
    return (feats - mu) / np.where(sd > 0, sd, 1.0)


def n_features(num_classes: int) -> int:
    return 27 + N_CONTEXT + 3 + num_classes


@dataclass
class ToyModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    frozen: bool = False

    @classmethod
    def init(cls, n_in: int, n_out: int, hidden: int = 32, seed: int = 0) -> "ToyModel":
        g = rng.generator(seed, "model-init")
        s1 = 1.0 / np.sqrt(n_in)
        s2 = 1.0 / np.sqrt(hidden)
        return cls(
            g.uniform(-s1, s1, (n_in, hidden)),
            g.uniform(-s1, s1, hidden),
            g.uniform(-s2, s2, (hidden, n_out)),
            g.uniform(-s2, s2, n_out),
        )

    @classmethod
    def zeros(cls, n_in: int, n_out: int, hidden: int = 32) -> "ToyModel":
        return cls(np.zeros((n_in, hidden)), np.zeros(hidden), np.zeros((hidden, n_out)), np.zeros(n_out))

    @property
    def params(self) -> Dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> "ToyModel":
        return ToyModel(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def freeze(self) -> "ToyModel":
        for p in self.params.values():
            p.flags.writeable = False
        self.frozen = True
        return self

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params.values()])

    def with_flat(self, x: np.ndarray) -> "ToyModel":
        out, i = [], 0
        for p in self.params.values():
            out.append(x[i : i + p.size].reshape(p.shape))
            i += p.size
        return ToyModel(*out)


def forward(model: ToyModel, feats: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Logits ``(N, C)``, hidden features ``(N, H)`` and the relu pre-activation.

    Matrix products run in the dtype of ``feats`` (float32 features trade
    precision for speed); logits are always returned as float64.
    """
    if feats.ndim != 2 or feats.shape[1] != model.W1.shape[0]:
        raise ValueError(f"features have shape {feats.shape}, model expects {model.W1.shape[0]} inputs")
    dt = feats.dtype
    pre = feats @ model.W1.astype(dt, copy=False) + model.b1.astype(dt, copy=False)
    h = np.maximum(pre, 0)
    logits = h @ model.W2.astype(dt, copy=False) + model.b2.astype(dt, copy=False)
    return logits.astype(np.float64, copy=False), h, pre


def backward(model: ToyModel, feats, h, pre, d_logits, d_hidden=None) -> Dict[str, np.ndarray]:
    """Parameter gradients given upstream gradients on logits and hidden features."""
    if d_logits.shape != (feats.shape[0], model.W2.shape[1]):
        raise ValueError("upstream logit gradient has the wrong shape")
    dt = feats.dtype
    d_logits = d_logits.astype(dt, copy=False)
    dh = d_logits @ model.W2.T.astype(dt, copy=False)
    if d_hidden is not None:
        if d_hidden.shape != h.shape:
            raise ValueError("upstream feature gradient has the wrong shape")
        dh += d_hidden
    dpre = dh * (pre > 0)
    grads = {
        "W1": feats.T @ dpre,
        "b1": dpre.sum(axis=0),
        "W2": h.T @ d_logits,
        "b2": d_logits.sum(axis=0),
    }
    return {k: v.astype(np.float64, copy=False) for k, v in grads.items()}


def sgd_step(model: ToyModel, grads: Dict[str, np.ndarray], step_size: float, velocity=None, momentum: float = 0.0):
    if model.frozen:
        raise RuntimeError("attempt to update a frozen model")
    for k, p in model.params.items():
        g = grads[k]
        if momentum:
            v = velocity.setdefault(k, np.zeros_like(p))
            v *= momentum
            v += g
            g = v
        p -= step_size * g


def save_model(path, model: ToyModel):
    with open(path, "wb") as fh:
        np.savez(fh, **model.params)


def load_model(path) -> ToyModel:
    """Parameters written by ``save_model``; missing or misshapen arrays raise ValueError."""
    with np.load(path, allow_pickle=False) as z:
        try:
            W1, b1, W2, b2 = (np.array(z[k], dtype=np.float64) for k in ("W1", "b1", "W2", "b2"))
        except KeyError as e:
            raise ValueError(f"model file lacks array {e}") from None
    if W1.ndim != 2 or W2.ndim != 2 or b1.shape != (W1.shape[1],) or W2.shape[0] != W1.shape[1] or b2.shape != (W2.shape[1],):
        raise ValueError("model arrays have inconsistent shapes")
    return ToyModel(W1, b1, W2, b2)

