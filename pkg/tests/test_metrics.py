import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import metrics_bruteforce
from scribocc.grid import GridSpec, LabelGrid, RangePartition, cumulative_mask
from scribocc.metrics import (
    RangeReport,
    confusion,
    geometric_iou,
    per_class_iou,
    range_report,
    semantic_miou,
    ssfs_ratio,
)


def _grid(codes, K=3):
    codes = np.asarray(codes, dtype=np.uint16)
    spec = GridSpec(codes.shape, 0.2, (0.0, -codes.shape[1] * 0.1, -1.0))
    return LabelGrid(spec, codes, K)


def _random_pair(rs, dims, K, unlabeled=0.1):
    gt = rs.integers(0, K + 1, dims)
    gt[rs.random(dims) < unlabeled] = 255
    pred = rs.integers(0, K + 1, dims)
    return _grid(pred, K), _grid(gt, K)


# -- confusion -------------------------------------------------------------------


def test_confusion_identity_diagonal():
    rs = np.random.default_rng(0)
    codes = rs.integers(0, 4, (4, 4, 2))
    c = confusion(_grid(codes), _grid(codes))
    assert c.shape == (4, 4)
    assert (c == np.diag(np.diag(c))).all()
    assert c.sum() == codes.size


def test_confusion_all_unlabeled_gt():
    c = confusion(_grid(np.ones((3, 3, 2))), _grid(np.full((3, 3, 2), 255)))
    assert not c.any()


def test_confusion_single_mismatch():
    gt = np.zeros((2, 2, 2))
    pred = np.zeros((2, 2, 2))
    gt[1, 0, 1], pred[1, 0, 1] = 2, 3
    mask = np.zeros((2, 2, 2), bool)
    mask[1, 0, 1] = True
    c = confusion(_grid(pred), _grid(gt), mask)
    assert c[2, 3] == 1 and c.sum() == 1


def test_confusion_errors():
    a = _grid(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        confusion(_grid(np.zeros((2, 2, 3))), a)
    with pytest.raises(ValueError):
        confusion(_grid(np.full((2, 2, 2), 255)), a)


# -- IoU and mIoU ----------------------------------------------------------------


def test_geometric_iou_one_third():
    gt = np.zeros((4, 1, 1))
    pred = np.zeros((4, 1, 1))
    pred[[0, 1]] = 1
    gt[[1, 2]] = 1
    assert geometric_iou(confusion(_grid(pred), _grid(gt))) == pytest.approx(100 / 3)


def test_geometric_iou_perfect_and_empty():
    rs = np.random.default_rng(1)
    codes = rs.integers(0, 4, (3, 3, 3))
    assert geometric_iou(confusion(_grid(codes), _grid(codes))) == 100
    z = np.zeros((3, 3, 3))
    assert geometric_iou(confusion(_grid(z), _grid(z))) == 100


def test_miou_examples():
    rs = np.random.default_rng(2)
    codes = rs.integers(0, 4, (5, 5, 3))
    assert semantic_miou(confusion(_grid(codes), _grid(codes)))[0] == 100
    gt = rs.integers(1, 4, (5, 5, 3))
    assert semantic_miou(confusion(_grid(gt % 3 + 1), _grid(gt)))[0] == 0


def test_miou_count_example():
    conf = np.zeros((3, 3), int)
    conf[1, 1] = 5  # class 1: TP 5
    conf[0, 2] = 5  # class 2: FP 5
    conf[2, 0] = 5  # class 2: FN 5
    m, iou = semantic_miou(conf)
    np.testing.assert_allclose(iou, [100, 0])
    assert m == 50


def test_miou_excludes_absent_classes_and_errors_when_none():
    conf = np.zeros((4, 4), int)
    conf[1, 1] = 3
    m, iou = semantic_miou(conf)
    assert m == 100 and np.isnan(iou[1:]).all()
    with pytest.raises(ValueError):
        semantic_miou(np.diag([7, 0, 0, 0]))


def test_metrics_match_bruteforce_oracle():
    rs = np.random.default_rng(3)
    for _ in range(100):
        dims = tuple(int(d) for d in rs.integers(1, 17, 3))
        K = int(rs.integers(1, 6))
        pred, gt = _random_pair(rs, dims, K)
        mask = rs.random(dims) < 0.8
        conf = confusion(pred, gt, mask)
        iou, per = metrics_bruteforce(pred.codes, gt.codes, K, mask)
        assert geometric_iou(conf) == iou
        got = per_class_iou(conf)
        np.testing.assert_array_equal(np.isnan(got), np.isnan(per))
        np.testing.assert_array_equal(got[~np.isnan(got)], np.asarray(per)[~np.isnan(per)])


@given(st.integers(0, 10_000))
def test_metrics_permutation_invariant(seed):
    rs = np.random.default_rng(seed)
    pred, gt = _random_pair(rs, (4, 3, 5), 3)
    mask = rs.random((4, 3, 5)) < 0.7
    perm = rs.permutation(60)

    def shuffled(g):
        return _grid(g.codes.ravel()[perm].reshape(g.codes.shape))

    a = confusion(pred, gt, mask)
    b = confusion(shuffled(pred), shuffled(gt), mask.ravel()[perm].reshape(mask.shape))
    np.testing.assert_array_equal(a, b)


@given(st.integers(0, 10_000))
def test_confusion_additive_over_disjoint_masks(seed):
    rs = np.random.default_rng(seed)
    pred, gt = _random_pair(rs, (5, 4, 3), 4)
    split = rs.integers(0, 3, (5, 4, 3))
    m1, m2 = split == 0, split == 1
    np.testing.assert_array_equal(confusion(pred, gt, m1 | m2), confusion(pred, gt, m1) + confusion(pred, gt, m2))


@given(st.integers(0, 10_000))
def test_adding_correct_voxels_never_lowers_tp(seed):
    rs = np.random.default_rng(seed)
    pred, gt = _random_pair(rs, (5, 4, 3), 3)
    m1 = rs.random((5, 4, 3)) < 0.4
    correct = (pred.codes == gt.codes) & (gt.codes != 255)
    m2 = m1 | (correct & (rs.random((5, 4, 3)) < 0.5))
    tp = lambda c: c[1:, 1:].sum()
    assert tp(confusion(pred, gt, m2)) >= tp(confusion(pred, gt, m1))


# -- range report ----------------------------------------------------------------


def test_ssfs_example():
    assert ssfs_ratio(13.27, 13.35) == pytest.approx(99.40, abs=0.005)
    assert ssfs_ratio(5.0, 0.0) is None


def test_range_report_perfect_and_self_ratio():
    rs = np.random.default_rng(4)
    codes = rs.integers(0, 4, (16, 16, 4))
    g = _grid(codes)
    part = RangePartition.for_spec(g.spec)
    rep = range_report(g, g, part)
    assert rep.iou == [100.0] * 3 and rep.miou == [100.0] * 3
    rep2 = range_report(g, g, part, reference=rep)
    assert rep2.ssfs == [100.0] * 3


def test_range_report_outer_equals_full_volume():
    rs = np.random.default_rng(5)
    pred, gt = _random_pair(rs, (16, 16, 4), 3)
    part = RangePartition.for_spec(gt.spec)
    assert cumulative_mask(part, gt.spec, 3).all()
    rep = range_report(pred, gt, part)
    conf = confusion(pred, gt)
    assert rep.iou[2] == pytest.approx(geometric_iou(conf))
    assert rep.miou[2] == pytest.approx(semantic_miou(conf)[0])


def test_range_report_zero_reference_flagged():
    rs = np.random.default_rng(6)
    pred, gt = _random_pair(rs, (16, 16, 4), 3)
    part = RangePartition.for_spec(gt.spec)
    ref = range_report(pred, gt, part)
    ref.miou = [0.0, ref.miou[1], ref.miou[2]]
    rep = range_report(pred, gt, part, reference=ref)
    assert rep.ssfs[0] is None and rep.ssfs[1] is not None
    assert any("SS/FS omitted" in w for w in rep.warnings)


def test_range_report_bounds_and_roundtrip():
    rs = np.random.default_rng(7)
    pred, gt = _random_pair(rs, (16, 16, 4), 3)
    rep = range_report(pred, gt, RangePartition.for_spec(gt.spec))
    for vals in (rep.iou, rep.miou):
        assert all(0 <= v <= 100 for v in vals)
    assert all(len(pc) == 3 for pc in rep.per_class)
    back = RangeReport.from_dict(rep.to_dict())
    assert back.miou == rep.miou and back.per_class == rep.per_class
