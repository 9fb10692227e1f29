"""Deterministic synthetic scenes and the degradations applied to them."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Dict, Optional, Tuple

import numpy as np

from . import _kernels, rng
from .grid import EMPTY, UNLABELED, GridSpec, LabelGrid

GROUND, BUILDING, VEGETATION, CAR, POLE = 1, 3, 4, 5, 6

# class -> (count, min size, max size) in voxels; size is footprint edge / radius / height
DEFAULT_OBJECTS = {
    "building": (6, 5, 12),
    "car": (10, 4, 7),
    "pole": (14, 5, 10),
    "vegetation": (10, 2, 4),
}

POSS_SCRIBBLE_RATE = 0.10
KITTI_SCRIBBLE_RATE = 0.135


@dataclass(frozen=True)
class SceneParams:
    seed: int = 0
    spec: GridSpec = field(default_factory=GridSpec.desk)
    num_classes: int = 8
    objects: Dict[str, Tuple[int, int, int]] = field(default_factory=lambda: dict(DEFAULT_OBJECTS))
    label_noise: float = 0.2

    def __post_init__(self):
        if self.num_classes < max(GROUND, BUILDING, VEGETATION, CAR, POLE):
            raise ValueError("num_classes must be >= 6 for the synthetic class layout")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ValueError("label_noise must be in [0, 1]")
        for name, (count, lo, hi) in self.objects.items():
            if name not in DEFAULT_OBJECTS:
                raise ValueError(f"unknown object kind {name!r}")
            if count < 0 or lo < 1 or hi < lo:
                raise ValueError(f"bad density for {name}: {(count, lo, hi)}")


@dataclass
class Scene:
    truth: LabelGrid
    hints: np.ndarray  # (X, Y, Z, K + 1) one-hot, channel 0 = empty
    meta: dict

    @property
    def spec(self) -> GridSpec:
        return self.truth.spec


def gen_scene(params: SceneParams) -> Scene:
    """Ground slab plus buildings, cars, poles and vegetation blobs.

    Objects that would overlap an already placed object are skipped and
    counted in ``meta["skipped"]``.
    """
    X, Y, Z = params.spec.dims
    K = params.num_classes
    codes = np.zeros((X, Y, Z), dtype=np.uint16)
    ground_top = min(2, Z)
    codes[:, :, :ground_top] = GROUND
    free = np.ones((X, Y), dtype=bool)
    skipped = {}
    placed = {}
    gen = rng.generator(params.seed, "scene")

    def footprint(w, d):
        if w > X or d > Y:
            return None
        for _ in range(20):
            x0 = int(gen.integers(0, X - w + 1))
            y0 = int(gen.integers(0, Y - d + 1))
            if free[x0 : x0 + w, y0 : y0 + d].all():
                return x0, y0
        return None

    for kind in ("building", "car", "pole", "vegetation"):
        count, lo, hi = params.objects.get(kind, (0, 1, 1))
        skipped[kind] = 0
        placed[kind] = 0
        for _ in range(count):
            s = int(gen.integers(lo, hi + 1))
            if kind == "building":
                w, d = s, int(gen.integers(lo, hi + 1))
                h = int(gen.integers(4, max(5, Z - ground_top)))
                cls = BUILDING
            elif kind == "car":
                w, d, h = s, max(2, s // 2), 2
                if gen.random() < 0.5:
                    w, d = d, w
                cls = CAR
            elif kind == "pole":
                w, d, h = 1, 1, s
                cls = POLE
            else:
                w = d = 2 * s + 1
                h = 0
                cls = VEGETATION
            at = footprint(w, d)
            if at is None or ground_top + max(h, 1) > Z:
                skipped[kind] += 1
                continue
            x0, y0 = at
            if kind == "vegetation":
                r = s
                zc = ground_top + r + int(gen.integers(0, 3))
                xs, ys, zs = np.ogrid[0:w, 0:d, 0:Z]
                blob = (xs - r) ** 2 + (ys - r) ** 2 + ((zs - zc) * 1.3) ** 2 <= r * r + 0.5
                blob &= zs >= ground_top
                region = codes[x0 : x0 + w, y0 : y0 + d, :]
                region[blob] = cls
                codes[x0 + r, y0 + r, ground_top : zc - r + 1] = cls  # trunk
            else:
                codes[x0 : x0 + w, y0 : y0 + d, ground_top : ground_top + h] = cls
            free[x0 : x0 + w, y0 : y0 + d] = False
            placed[kind] += 1

    truth = LabelGrid(params.spec, codes, K)
    hints = _make_hints(codes, K, params.label_noise, params.seed)
    meta = {"seed": params.seed, "placed": placed, "skipped": skipped}
    return Scene(truth, hints, meta)


def _make_hints(codes, K, noise, seed):
    flat = np.arange(codes.size, dtype=np.uint64)
    hint = codes.ravel().astype(np.int64)
    resample = rng.uniform(seed, "hint-noise", flat) < noise
    hint = np.where(resample, rng.integers(seed, "hint-class", flat, K + 1), hint)
    onehot = np.zeros((codes.size, K + 1), dtype=bool)
    onehot[np.arange(codes.size), hint] = True
    return onehot.reshape(codes.shape + (K + 1,))


def scribble_draws(truth: LabelGrid, seed: int) -> np.ndarray:
    """The shared per-voxel uniform draw used by ``scribblize``."""
    return rng.uniform(seed, "scribble", np.arange(truth.spec.n_voxels, dtype=np.uint64)).reshape(
        truth.spec.dims
    )


def scribblize(truth: LabelGrid, rate: float = KITTI_SCRIBBLE_RATE, seed: int = 0) -> LabelGrid:
    """Keep each labeled voxel's class with probability ``rate``; the rest become unlabeled."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    codes = truth.codes
    labeled = (codes != EMPTY) & (codes != UNLABELED)
    drop = labeled & ~(scribble_draws(truth, seed) < rate)
    return LabelGrid(truth.spec, np.where(drop, UNLABELED, codes), truth.num_classes)


def corrupt_geometry(G: np.ndarray, drop_rate: float, add_rate: float, seed: int = 0) -> np.ndarray:
    """Randomly clear occupied voxels and set empty ones."""
    if not (0.0 <= drop_rate <= 1.0 and 0.0 <= add_rate <= 1.0):
        raise ValueError("rates must be in [0, 1]")
    G = np.asarray(G, dtype=bool)
    flat = np.arange(G.size, dtype=np.uint64)
    u_drop = rng.uniform(seed, "geo-drop", flat).reshape(G.shape)
    u_add = rng.uniform(seed, "geo-add", flat).reshape(G.shape)
    return np.where(G, u_drop >= drop_rate, u_add < add_rate)


def ray_directions(n_rays: int, seed: int = 0) -> np.ndarray:
    """Directions uniform on the unit sphere."""
    idx = np.arange(n_rays, dtype=np.uint64)
    cz = 2.0 * rng.uniform(seed, "ray-z", idx) - 1.0
    phi = 2.0 * np.pi * rng.uniform(seed, "ray-phi", idx)
    s = np.sqrt(np.maximum(0.0, 1.0 - cz * cz))
    return np.column_stack([s * np.cos(phi), s * np.sin(phi), cz])


def visible_surface(
    G: np.ndarray,
    spec: GridSpec,
    sensor,
    n_rays: int = 20000,
    seed: int = 0,
    directions: Optional[np.ndarray] = None,
) -> np.ndarray:
    """First occupied voxel hit by each ray cast from ``sensor`` (world metres)."""
    if n_rays < 1 and directions is None:
        raise ValueError("n_rays must be >= 1")
    o = (np.asarray(sensor, dtype=np.float64) - np.asarray(spec.origin)) / spec.voxel_size
    if np.any(o < 0) or np.any(o > np.asarray(spec.dims)):
        raise ValueError("sensor must lie inside or on the boundary of the volume")
    dirs = ray_directions(n_rays, seed) if directions is None else np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    return _kernels.first_hit(np.asarray(G, dtype=bool), o, dirs)


def params_to_dict(params: SceneParams) -> dict:
    d = asdict(params)
    d["spec"] = {"dims": list(params.spec.dims), "voxel_size": params.spec.voxel_size, "origin": list(params.spec.origin)}
    d["objects"] = {k: list(v) for k, v in params.objects.items()}
    return d
