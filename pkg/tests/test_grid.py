import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scribocc.grid import (
    EMPTY,
    UNLABELED,
    GridSpec,
    LabelGrid,
    RangePartition,
    cumulative_mask,
    merge_grid,
    points_to_voxels,
    shell_ids,
    shell_mask,
    shell_of,
    split_grid,
    world_to_voxel,
)

DEFAULT = GridSpec()


def test_default_spec():
    assert DEFAULT.dims == (256, 256, 32)
    assert DEFAULT.voxel_size == 0.2
    assert DEFAULT.origin == (0.0, -25.6, -2.0)
    assert DEFAULT.extent == (51.2, 51.2, 6.4)
    assert DEFAULT.n_voxels == 2_097_152


@pytest.mark.parametrize("dims,size", [((0, 4, 4), 0.2), ((4, 4), 0.2), ((4, 4, 4), 0.0), ((4, 4, 4), -1.0)])
def test_spec_rejects_bad_values(dims, size):
    with pytest.raises(ValueError):
        GridSpec(dims, size)


@pytest.mark.parametrize(
    "p,expected",
    [((0.0, 0.0, 0.0), (0, 128, 10)), ((51.2, 0.0, 0.0), None), ((0.1, 0.1, -1.9), (0, 128, 0))],
)
def test_world_to_voxel_examples(p, expected):
    assert world_to_voxel(p, DEFAULT) == expected


def test_world_to_voxel_bounds():
    assert world_to_voxel((-0.01, 0.0, 0.0), DEFAULT) is None
    assert world_to_voxel((0.0, 25.6, 0.0), DEFAULT) is None
    assert world_to_voxel((0.0, -25.6, -2.0), DEFAULT) == (0, 0, 0)


@given(
    st.floats(0, 51.2, exclude_max=True),
    st.floats(-25.6, 25.6, exclude_max=True),
    st.floats(-2.0, 4.4, exclude_max=True),
)
def test_voxel_center_within_half_voxel(x, y, z):
    idx = world_to_voxel((x, y, z), DEFAULT)
    if idx is None:  # rounding can push a point sitting just below the max face out
        return
    c = DEFAULT.voxel_to_world_center(idx)
    assert np.all(np.abs(c - (x, y, z)) <= DEFAULT.voxel_size / 2 + 1e-9)


def test_points_to_voxels_matches_scalar(rs):
    pts = rs.uniform([-2, -28, -3], [54, 28, 6], size=(500, 3))
    flat, inside = points_to_voxels(pts, DEFAULT)
    expected = [world_to_voxel(p, DEFAULT) for p in pts]
    assert list(inside) == [e is not None for e in expected]
    assert list(flat) == [DEFAULT.flat_index(e) for e in expected if e is not None]


def test_flat_index_is_c_order():
    spec = GridSpec((3, 4, 5))
    a = np.arange(60).reshape(3, 4, 5)
    for idx in [(0, 0, 0), (2, 3, 4), (1, 2, 3)]:
        assert a[idx] == spec.flat_index(idx)


@pytest.mark.parametrize("x,y,shell", [(6.0, 0.0, 1), (20.0, 0.0, 2), (50.0, 25.0, 3)])
def test_shell_of_examples(x, y, shell):
    idx = world_to_voxel((x, y, 0.0), DEFAULT)
    assert shell_of(idx, RangePartition(), DEFAULT) == shell


def test_shell_of_out_of_bounds():
    with pytest.raises(IndexError):
        shell_of((256, 0, 0), RangePartition(), DEFAULT)
    with pytest.raises(IndexError):
        shell_of((0, 0), RangePartition(), DEFAULT)


def test_cumulative_mask_default():
    part = RangePartition()
    m3 = cumulative_mask(part, DEFAULT, 3)
    assert m3.all() and m3.size == 2_097_152
    cx, cy, _ = DEFAULT.centers()
    m1 = cumulative_mask(part, DEFAULT, 1)
    expected = (cx[:, None] < 12.8) & (np.abs(cy)[None, :] < 6.4)
    assert np.array_equal(m1, np.repeat(expected[:, :, None], 32, axis=2))
    m2 = cumulative_mask(part, DEFAULT, 2)
    assert not (m1 & ~m2).any() and not (m2 & ~m3).any()


def test_invalid_shell_id():
    for r in (0, 4):
        with pytest.raises(ValueError):
            cumulative_mask(RangePartition(), DEFAULT, r)


@pytest.mark.parametrize("spec", [GridSpec.desk(), GridSpec((10, 12, 3), 0.5, (-1.0, -3.0, 0.0))])
def test_shells_partition_grid(spec):
    part = RangePartition.for_spec(spec)
    masks = [shell_mask(part, spec, r) for r in (1, 2, 3)]
    assert sum(int(m.sum()) for m in masks) == spec.n_voxels
    assert not (masks[0] & masks[1]).any() and not (masks[1] & masks[2]).any() and not (masks[0] & masks[2]).any()
    for r in (1, 2, 3):
        union = np.logical_or.reduce(masks[:r])
        assert np.array_equal(cumulative_mask(part, spec, r), union)


def test_shell_ids_agree_with_shell_of():
    spec = GridSpec.desk()
    part = RangePartition.for_spec(spec)
    ids = shell_ids(part, spec)
    for idx in [(0, 0, 0), (5, 30, 3), (20, 10, 8), (40, 63, 15), (63, 32, 0), (15, 20, 1)]:
        assert ids[idx] == shell_of(idx, part, spec)


def test_for_spec_reproduces_default_partition():
    part = RangePartition.for_spec(DEFAULT)
    assert part.thresholds == (12.8, 25.6, 51.2)
    assert part.ego == (0.0, 0.0, 0.0)


def test_partition_rejects_unsorted():
    with pytest.raises(ValueError):
        RangePartition((25.6, 12.8, 51.2))


@pytest.mark.parametrize("code,g,s", [(0, False, 0), (255, True, 0), (7, True, 7)])
def test_split_examples(code, g, s):
    spec = GridSpec((1, 1, 1))
    G, S = split_grid(LabelGrid(spec, np.array([code]), 19))
    assert G.ravel()[0] == g and S.ravel()[0] == s


@given(st.lists(st.sampled_from([0, 1, 2, 3, 4, 5, 255]), min_size=24, max_size=24))
def test_split_merge_roundtrip(codes):
    spec = GridSpec((2, 3, 4))
    grid = LabelGrid(spec, np.array(codes), 5)
    G, S = split_grid(grid)
    assert merge_grid(G, S, spec, 5) == grid


def test_label_grid_validation():
    spec = GridSpec((2, 2, 2))
    with pytest.raises(ValueError):
        LabelGrid(spec, np.zeros(7), 5)
    with pytest.raises(ValueError):
        LabelGrid(spec, np.full(8, 6), 5)
    g = LabelGrid(spec, np.full(8, UNLABELED), 5)
    with pytest.raises(ValueError):
        g.codes[0, 0, 0] = EMPTY
