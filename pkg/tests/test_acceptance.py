"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import BENCHMARK_SEEDS
from oracles import metrics_bruteforce, vote_bruteforce
from scribocc import certify
from scribocc import distill as D
from scribocc.grid import UNLABELED, GridSpec, LabelGrid, RangePartition
from scribocc.io import FormatError, LabeledPointCloud, read_grid, write_grid
from scribocc.labels import majority_vote
from scribocc.metrics import RangeReport, confusion, geometric_iou, per_class_iou, range_report, ssfs_ratio
from scribocc.pipeline import TrainConfig, prepare, train_dean
from scribocc.synth import SceneParams, gen_scene, scribblize
from test_io import malformed_inputs


@pytest.fixture
def verdict(capsys):
    def report(n, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n:2d} {title}: {detail}")
        assert ok, detail

    return report


def test_c01_gradient_certification(verdict):
    t0 = time.perf_counter()
    worst = {}
    for dims in [(4, 4, 3), (6, 6, 6), (8, 8, 8)]:
        for name, (f, x0) in certify.loss_checks(dims, seed=0).items():
            err = D.gradcheck(f, np.ravel(x0), 1e-5)
            worst[name] = max(worst.get(name, 0.0), err)
    f, x0 = certify.composite_check((6, 6, 4), seed=0)
    worst["composite_objective"] = D.gradcheck(f, x0, 1e-5)
    elapsed = time.perf_counter() - t0
    name, top = max(worst.items(), key=lambda kv: kv[1])
    ok = top < 1e-4 and elapsed < 60
    verdict(1, "gradient certification", ok, f"worst {name} {top:.2e} (< 1e-4) over {len(worst)} checks, {elapsed:.1f} s")


def test_c02_oracle_equivalence(verdict):
    rs = np.random.default_rng(2024)
    t0 = time.perf_counter()
    vote_bad = metric_bad = 0
    for _ in range(100):
        dims = tuple(int(d) for d in rs.integers(1, 17, 3))
        spec = GridSpec(dims, 0.5, (0.0, -1.0, 0.0))
        K = int(rs.integers(1, 20))
        n = int(rs.integers(0, 10_001))
        lo = np.array(spec.origin) - 0.5
        hi = np.array(spec.origin) + np.array(spec.extent) + 0.5
        pts = rs.uniform(lo, hi, (n, 3))
        labels = np.where(rs.random(n) < 0.3, 0, rs.integers(1, K + 1, n))
        got = majority_vote(LabeledPointCloud(pts, None, labels, frame="world"), spec, K).codes
        vote_bad += not np.array_equal(got, vote_bruteforce(pts, labels, spec, K))
    for _ in range(100):
        dims = tuple(int(d) for d in rs.integers(1, 17, 3))
        K = int(rs.integers(1, 8))
        gt = rs.integers(0, K + 1, dims)
        gt[rs.random(dims) < 0.1] = UNLABELED
        spec = GridSpec(dims, 0.2, (0.0, 0.0, 0.0))
        pred = LabelGrid(spec, rs.integers(0, K + 1, dims).astype(np.uint16), K)
        gtg = LabelGrid(spec, gt.astype(np.uint16), K)
        mask = rs.random(dims) < 0.8
        conf = confusion(pred, gtg, mask)
        iou, per = metrics_bruteforce(pred.codes, gtg.codes, K, mask)
        mine = per_class_iou(conf)
        same = geometric_iou(conf) == iou and np.array_equal(mine, np.asarray(per), equal_nan=True)
        metric_bad += not same
    elapsed = time.perf_counter() - t0
    ok = vote_bad == 0 and metric_bad == 0 and elapsed < 30
    verdict(2, "oracle equivalence", ok, f"vote mismatches {vote_bad}/100, metric mismatches {metric_bad}/100, {elapsed:.1f} s")


def test_c03_pearson_properties(verdict):
    rs = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rs.integers(2, 50))
        a = rs.normal(size=n)
        c = rs.normal() * 10
        lam = rs.uniform(1e-3, 1e3)
        worst = max(
            worst,
            abs(D.pearson_distance(a, a)),
            abs(D.pearson_distance(a, -a + c) - 2),
            abs(D.pearson_distance(a, lam * a + c)),
        )
    elapsed = time.perf_counter() - t0
    verdict(3, "Pearson properties", worst <= 1e-10 and elapsed < 5, f"max deviation {worst:.1e} on 1000 vectors, {elapsed:.2f} s")


def test_c04_constants(verdict):
    w = D.DistillWeights()
    spec = GridSpec()
    total = D.compose_distill(1, (1, 1, 1), (1, 1, 1))
    ok = (
        w.w == (0.06, 0.15, 0.2)
        and (w.alpha, w.beta) == (2.625, 0.375)
        and spec.dims == (256, 256, 32)
        and spec.voxel_size == 0.2
        and total == 1.82
    )
    verdict(4, "constants fidelity", ok, f"w_r {w.w}, alpha/beta {(w.alpha, w.beta)}, grid {spec.dims} @ {spec.voxel_size} m, composed {total!r}")


def test_c05_ssfs_arithmetic(verdict):
    direct = ssfs_ratio(13.27, 13.35)
    # the same ratio through a full report: scale the reference by the target ratio
    rs = np.random.default_rng(5)
    spec = GridSpec.desk()
    gt = LabelGrid(spec, rs.integers(0, 4, spec.dims).astype(np.uint16), 3)
    pred = LabelGrid(spec, np.where(rs.random(spec.dims) < 0.5, gt.codes, rs.integers(0, 4, spec.dims)).astype(np.uint16), 3)
    part = RangePartition.for_spec(spec)
    rep = range_report(pred, gt, part)
    ref = RangeReport(rep.ranges, rep.iou, [m * 13.35 / 13.27 for m in rep.miou], rep.per_class)
    via_report = range_report(pred, gt, part, ref).ssfs[-1]
    ok = abs(direct - 99.40) <= 0.01 and abs(via_report - 99.40) <= 0.01
    verdict(5, "SS/FS arithmetic", ok, f"13.27 / 13.35 -> {direct:.4f}% (report path {via_report:.4f}%)")


def test_c06_dean_geometry_fidelity(verdict):
    worst_t, ious = 0.0, []
    for seed, dims in [(0, (64, 64, 16)), (1, (64, 64, 16)), (7, (48, 40, 12))]:
        t0 = time.perf_counter()
        cfg = TrainConfig(scene=SceneParams(spec=GridSpec(dims, 0.2, (0.0, -dims[1] * 0.1, -2.0)))).with_seed(seed)
        inputs = prepare(cfg)
        pseudo = train_dean(inputs, cfg).pseudo
        ious.append(float(geometric_iou(confusion(pseudo, inputs.scene.truth))))
        worst_t = max(worst_t, time.perf_counter() - t0)
    ok = all(v == 100.0 for v in ious) and worst_t < 30
    verdict(6, "Dean geometry fidelity", ok, f"pseudo-label IoU {ious} on 3 scenes, slowest {worst_t:.1f} s")


@pytest.mark.slow
def test_c07_distillation_trend(verdict, benchmark_runs):
    m = benchmark_runs["mean_miou"]
    base, full = m["baseline"], m["DL+TL+RGO2D"]
    lo, hi = base - 1.0, full + 1.0
    mids = {k: m[k] for k in ("DL", "DL+TL")}
    ok = full >= base + 2.0 and all(lo <= v <= hi for v in mids.values()) and benchmark_runs["elapsed"] < 600
    detail = (
        f"{len(BENCHMARK_SEEDS)}-seed mIoU baseline {base:.2f}, DL {mids['DL']:.2f}, DL+TL {mids['DL+TL']:.2f}, "
        f"full {full:.2f} (need >= {base + 2:.2f}, middles in [{lo:.2f}, {hi:.2f}]), {benchmark_runs['elapsed']:.0f} s"
    )
    verdict(7, "distillation trend", ok, detail)


@pytest.mark.slow
def test_c08_ablation_direction(verdict, benchmark_runs):
    m = benchmark_runs["mean_miou"]
    no_g, no_l, no_r, full = m["w/o global"], m["w/o local"], m["w/o range-info"], m["DL+TL+RGO2D"]
    ok = no_g < no_l - 0.3 and no_r < full
    detail = f"w/o global {no_g:.2f} < w/o local {no_l:.2f} - 0.3; w/o range-info {no_r:.2f} < default {full:.2f}"
    verdict(8, "ablation direction", ok, detail)


def test_c09_scribble_statistics(verdict):
    t0 = time.perf_counter()
    fracs, sizes = [], []
    for seed in range(5):
        truth = gen_scene(SceneParams(seed=seed, spec=GridSpec())).truth
        sc = scribblize(truth, 0.135, seed)
        occ = truth.geometry
        sizes.append(int(occ.sum()))
        fracs.append(float(((sc.codes >= 1) & (sc.codes != UNLABELED)).sum() / occ.sum()))
    overall = float(np.mean(fracs))
    elapsed = time.perf_counter() - t0
    ok = min(sizes) >= 100_000 and abs(overall - 0.135) <= 0.01 and elapsed < 10
    verdict(9, "scribble statistics", ok, f"labeled fraction {overall:.4f} over 5 scenes of >= {min(sizes)} occupied voxels, {elapsed:.1f} s")


_DETERMINISM_SCRIPT = """
import hashlib, numpy as np
from scribocc.pipeline import TrainConfig, prepare, train_dean, train_teacher, train_student
cfg = TrainConfig(steps=8)
inp = prepare(cfg)
d = train_dean(inp, cfg); t = train_teacher(inp, cfg); s = train_student(inp, d.pseudo, t, cfg)
h = hashlib.sha256()
for m in (d.model, t.model, s.model):
    for p in m.params.values():
        h.update(np.ascontiguousarray(p).tobytes())
h.update(d.pseudo.codes.tobytes()); h.update(s.pred.codes.tobytes())
h.update(repr(s.report.to_dict()).encode())
print(h.hexdigest())
"""


def _run_hash(threads):
    env = dict(os.environ)
    for k in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        env[k] = str(threads)
    src = str(Path(__file__).resolve().parents[1] / "src")
    env["PYTHONPATH"] = src + os.pathsep + env.get("PYTHONPATH", "")
    out = subprocess.run([sys.executable, "-c", _DETERMINISM_SCRIPT], env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_c10_determinism_and_io(verdict):
    t0 = time.perf_counter()
    hashes = [_run_hash(1), _run_hash(1), _run_hash(4)]
    same = len(set(hashes)) == 1

    rs = np.random.default_rng(10)
    roundtrip = True
    for _ in range(20):
        dims = tuple(int(d) for d in rs.integers(1, 20, 3))
        K = int(rs.integers(1, 30))
        codes = rs.integers(0, K + 1, dims).astype(np.uint16)
        codes[rs.random(dims) < 0.2] = UNLABELED
        g = LabelGrid(GridSpec(dims, float(rs.uniform(0.05, 1)), tuple(rs.normal(size=3))), codes, K)
        data = write_grid(g)
        back = read_grid(data, K)
        roundtrip &= back == g and write_grid(back) == data

    rejected = 0
    cases = malformed_inputs()
    for _, reader, data in cases:
        try:
            reader(data)
        except FormatError as e:
            rejected += bool(str(e))
    elapsed = time.perf_counter() - t0
    ok = same and roundtrip and rejected == len(cases) == 20 and elapsed < 30
    detail = (
        f"hash {'identical' if same else 'DIFFERS'} over 2 runs x 1 thread + 1 run x 4 threads, "
        f"round-trip {'bit-exact' if roundtrip else 'BROKEN'}, {rejected}/{len(cases)} malformed inputs rejected, {elapsed:.1f} s"
    )
    verdict(10, "determinism and IO", ok, detail)
