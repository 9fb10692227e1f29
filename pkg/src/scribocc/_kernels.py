"""Hot loops: numba-compiled when available, pure numpy otherwise.

Set ``SCRIBOCC_NO_NUMBA=1`` to force the numpy path. Integer kernels (vote,
ray traversal, confusion) are bit-identical across paths; the softmax kernels
agree to rounding. ``tests/test_kernels.py`` checks them against each other.
"""

import os

import numpy as np

_DISABLED = os.environ.get("SCRIBOCC_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# -- majority vote ---------------------------------------------------------------


def vote_numpy(flat, labels, n_voxels, num_classes):
    """Per-voxel codes from point hits: 0 no point, 255 no labeled point, else majority."""
    codes = np.zeros(n_voxels, dtype=np.uint16)
    if flat.size == 0:
        return codes
    codes[flat] = 255
    lab = labels >= 1
    if lab.any():
        key = flat[lab] * (num_classes + 1) + labels[lab]
        uniq, counts = np.unique(key, return_counts=True)
        vox = uniq // (num_classes + 1)
        cls = uniq % (num_classes + 1)
        # per voxel: highest count first, then smallest class id
        order = np.lexsort((cls, -counts, vox))
        vox, cls = vox[order], cls[order]
        first = np.ones(vox.size, dtype=bool)
        first[1:] = vox[1:] != vox[:-1]
        codes[vox[first]] = cls[first]
    return codes


def _vote_loop(flat, labels, n_voxels, num_classes):
    codes = np.zeros(n_voxels, dtype=np.uint16)
    n = flat.shape[0]
    if n == 0:
        return codes
    # bucket points by voxel (counting sort), then vote bucket by bucket
    start = np.zeros(n_voxels + 1, dtype=np.int64)
    for i in range(n):
        start[flat[i] + 1] += 1
    for v in range(n_voxels):
        start[v + 1] += start[v]
    fill = start[:-1].copy()
    order = np.empty(n, dtype=np.int64)
    for i in range(n):
        order[fill[flat[i]]] = i
        fill[flat[i]] += 1
    counts = np.zeros(num_classes + 1, dtype=np.int64)
    for v in range(n_voxels):
        a, b = start[v], start[v + 1]
        if a == b:
            continue
        counts[:] = 0
        for j in range(a, b):
            counts[labels[order[j]]] += 1
        best = 0
        best_n = 0
        for c in range(1, num_classes + 1):
            if counts[c] > best_n:
                best = c
                best_n = counts[c]
        codes[v] = best if best_n > 0 else 255
    return codes


# -- first-hit ray traversal -----------------------------------------------------


def _ray_setup(origin, dirs, dims):
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    ijk = np.minimum(np.floor(o), np.asarray(dims) - 1).astype(np.int64)
    ijk = np.broadcast_to(np.maximum(ijk, 0), d.shape).copy()
    step = np.where(d > 0, 1, np.where(d < 0, -1, 0)).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_max = np.where(d != 0, (ijk + (step > 0) - o) / d, np.inf)
        t_delta = np.where(d != 0, 1.0 / np.abs(d), np.inf)
    return ijk, step, t_max, t_delta


def first_hit_numpy(occ, origin, dirs):
    """Mark the first occupied voxel along each ray (origin/dirs in voxel units)."""
    dims = np.asarray(occ.shape)
    out = np.zeros(occ.shape, dtype=bool)
    ijk, step, t_max, t_delta = _ray_setup(origin, dirs, occ.shape)
    active = np.arange(ijk.shape[0])
    while active.size:
        cur = ijk[active]
        inside = np.all((cur >= 0) & (cur < dims), axis=1)
        active, cur = active[inside], cur[inside]
        hit = occ[cur[:, 0], cur[:, 1], cur[:, 2]]
        out[cur[hit, 0], cur[hit, 1], cur[hit, 2]] = True
        active = active[~hit]
        if not active.size:
            break
        tm = t_max[active]
        ax = np.where(
            (tm[:, 0] < tm[:, 1]) & (tm[:, 0] < tm[:, 2]),
            0,
            np.where(tm[:, 1] < tm[:, 2], 1, 2),
        )
        ijk[active, ax] += step[active, ax]
        t_max[active, ax] += t_delta[active, ax]
    return out


def _first_hit_loop(occ, ijk, step, t_max, t_delta, out):
    X, Y, Z = occ.shape
    for r in range(ijk.shape[0]):
        x, y, z = ijk[r, 0], ijk[r, 1], ijk[r, 2]
        tx, ty, tz = t_max[r, 0], t_max[r, 1], t_max[r, 2]
        while 0 <= x < X and 0 <= y < Y and 0 <= z < Z:
            if occ[x, y, z]:
                out[x, y, z] = True
                break
            if tx < ty and tx < tz:
                x += step[r, 0]
                tx += t_delta[r, 0]
            elif ty < tz:
                y += step[r, 1]
                ty += t_delta[r, 1]
            else:
                z += step[r, 2]
                tz += t_delta[r, 2]
    return out


def first_hit_compiled(occ, origin, dirs):
    out = np.zeros(occ.shape, dtype=np.bool_)
    ijk, step, t_max, t_delta = _ray_setup(origin, dirs, occ.shape)
    return _first_hit_jit(np.ascontiguousarray(occ, dtype=np.bool_), ijk, step, t_max, t_delta, out)


# -- confusion matrix ------------------------------------------------------------


def confusion_numpy(gt, pred, n):
    return np.bincount(gt * n + pred, minlength=n * n).reshape(n, n).astype(np.int64)


def _confusion_loop(gt, pred, n):
    conf = np.zeros((n, n), dtype=np.int64)
    for i in range(gt.shape[0]):
        conf[gt[i], pred[i]] += 1
    return conf


# -- row softmax -----------------------------------------------------------------


def softmax_rows_numpy(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows_numpy(x):
    z = x - x.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _softmax_loop(x, out):
    n, c = x.shape
    for i in range(n):
        m = x[i, 0]
        for j in range(1, c):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(c):
            e = np.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        for j in range(c):
            out[i, j] /= s
    return out


def _log_softmax_loop(x, out):
    n, c = x.shape
    for i in range(n):
        m = x[i, 0]
        for j in range(1, c):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(c):
            s += np.exp(x[i, j] - m)
        ls = np.log(s)
        for j in range(c):
            out[i, j] = x[i, j] - m - ls
    return out


if HAVE_NUMBA:
    _softmax_jit = njit(cache=True)(_softmax_loop)
    _log_softmax_jit = njit(cache=True)(_log_softmax_loop)

    def softmax_rows(x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        return _softmax_jit(x, np.empty_like(x))

    def log_softmax_rows(x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        return _log_softmax_jit(x, np.empty_like(x))
else:
    softmax_rows = softmax_rows_numpy
    log_softmax_rows = log_softmax_rows_numpy


if HAVE_NUMBA:
    _vote_jit = njit(cache=True)(_vote_loop)
    _first_hit_jit = njit(cache=True)(_first_hit_loop)
    _confusion_jit = njit(cache=True)(_confusion_loop)

    def vote_compiled(flat, labels, n_voxels, num_classes):
        return _vote_jit(
            np.ascontiguousarray(flat, dtype=np.int64),
            np.ascontiguousarray(labels, dtype=np.int64),
            n_voxels,
            num_classes,
        )

    def confusion_compiled(gt, pred, n):
        return _confusion_jit(
            np.ascontiguousarray(gt, dtype=np.int64), np.ascontiguousarray(pred, dtype=np.int64), n
        )

    vote = vote_compiled
    first_hit = first_hit_compiled
    confusion = confusion_compiled
else:
    vote = vote_numpy
    first_hit = first_hit_numpy
    confusion = confusion_numpy


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
