"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Reports the best of ``--repeat`` runs per kernel after one warm-up call,
and checks both paths agree on the benchmark inputs.
"""

import argparse
import time

import numpy as np

from scribocc import _kernels as K

if not K.HAVE_NUMBA:
    raise SystemExit("numba is not available (or SCRIBOCC_NO_NUMBA is set); nothing to compare")


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation or cache load
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rs):
    n_vox, n_pts, n_cls = 64 * 64 * 16, 400_000, 19
    flat = rs.integers(0, n_vox, n_pts)
    labels = rs.integers(0, n_cls + 1, n_pts)
    yield "majority vote", (lambda: K.vote_numpy(flat, labels, n_vox, n_cls)), (
        lambda: K.vote_compiled(flat, labels, n_vox, n_cls)
    ), np.array_equal

    occ = rs.random((64, 64, 16)) < 0.05
    d = rs.normal(size=(20_000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    origin = np.array([0.5, 32.0, 8.0])
    yield "first-hit rays", (lambda: K.first_hit_numpy(occ, origin, d)), (
        lambda: K.first_hit_compiled(occ, origin, d)
    ), np.array_equal

    gt = rs.integers(0, 20, 2_000_000)
    pred = rs.integers(0, 20, 2_000_000)
    yield "confusion", (lambda: K.confusion_numpy(gt, pred, 20)), (lambda: K.confusion(gt, pred, 20)), np.array_equal

    x = rs.normal(size=(65_536, 9))
    yield "row softmax", (lambda: K.softmax_rows_numpy(x)), (lambda: K.softmax_rows(x)), (
        lambda a, b: np.allclose(a, b, rtol=0, atol=1e-14)
    )


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rs = np.random.default_rng(0)
    print(f"{'kernel':16s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  agree")
    for name, slow, fast, same in cases(rs):
        agree = same(slow(), fast())
        t_np = best_of(slow, args.repeat)
        t_nb = best_of(fast, args.repeat)
        print(f"{name:16s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:8.1f}x  {agree}")


if __name__ == "__main__":
    main()
