import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphcl import bcpmix
from graphcl.bcpmix import gen_mask, mix_labels, mix_pair
from graphcl.errors import LabelError, ShapeError
from graphcl.voldata import LabelMap, Volume


def test_mask_size_for_the_large_volume_setting():
    m = gen_mask((112, 112, 80), (74 / 112, 74 / 112, 53 / 80), np.random.default_rng(0))
    assert m.zero_size == (74, 74, 53)
    assert m.zeros == 74 * 74 * 53


def test_zero_ratio_zero_gives_all_ones():
    m = gen_mask((5, 7), 0.0, np.random.default_rng(0))
    assert m.grid.all()


def test_twelve_by_twelve_census():
    m = gen_mask((12, 12), 2 / 3, np.random.default_rng(0))
    assert (m.zeros, m.ones) == (64, 80)


def test_ratio_one_gives_all_zeros():
    m = gen_mask((4, 6), 1.0, np.random.default_rng(0))
    assert not m.grid.any()


def test_ratio_out_of_range():
    with pytest.raises(ValueError):
        gen_mask((4, 4), 1.5, np.random.default_rng(0))


@settings(max_examples=60, deadline=None)
@given(dims=st.lists(st.integers(1, 12), min_size=2, max_size=3), ratio=st.floats(0, 1), seed=st.integers(0, 999))
def test_mask_has_one_zero_block(dims, ratio, seed):
    m = gen_mask(dims, ratio, np.random.default_rng(seed))
    assert m.ones + m.zeros == int(np.prod(dims))
    zeros = np.argwhere(m.grid == 0)
    for a, (o, s, d) in enumerate(zip(m.zero_origin, m.zero_size, dims)):
        assert 0 <= o and o + s <= d
    if len(zeros):
        lo, hi = zeros.min(axis=0), zeros.max(axis=0) + 1
        # the bounding box of the zeros is completely zero: a single block
        assert not m.grid[tuple(slice(a, b) for a, b in zip(lo, hi))].any()
        assert tuple(hi - lo) == m.zero_size


def test_mask_draws_are_seeded():
    a = gen_mask((20, 20), 0.5, np.random.default_rng(5))
    b = gen_mask((20, 20), 0.5, np.random.default_rng(5))
    assert a.zero_origin == b.zero_origin


def test_mix_examples():
    xl, xu, m = np.array([1, 2, 3, 4.0]), np.array([5, 6, 7, 8.0]), np.array([1, 1, 0, 0], np.uint8)
    assert mix_pair(xl, xu, m, "in").tolist() == [1, 2, 7, 8]
    assert mix_pair(xl, xu, m, "out").tolist() == [5, 6, 3, 4]


def test_label_mix_examples():
    yl, yu, m = np.array([0, 1]), np.array([1, 1]), np.array([1, 0], np.uint8)
    assert mix_labels(yl, yu, m, "in").tolist() == [0, 1]
    assert mix_labels(yl, yu, m, "out").tolist() == [1, 1]


def test_all_ones_and_all_zeros_masks():
    rng = np.random.default_rng(0)
    xl, xu = rng.standard_normal((1, 1, 4, 4)), rng.standard_normal((1, 1, 4, 4))
    ones, zeros = np.ones((1, 4, 4), np.uint8), np.zeros((1, 4, 4), np.uint8)
    assert np.array_equal(mix_pair(xl, xu, ones, "in"), xl)
    yl = LabelMap(np.zeros((1, 4, 4)), 2)
    yp = LabelMap(rng.integers(0, 2, (1, 4, 4)), 2)
    assert np.array_equal(mix_labels(yl, yp, zeros, "in").grid, yp.grid)


def test_volume_mixing_keeps_metadata():
    rng = np.random.default_rng(0)
    a = Volume(rng.standard_normal((1, 1, 4, 4)).astype(np.float32), id="a")
    b = Volume(rng.standard_normal((1, 1, 4, 4)).astype(np.float32), id="b")
    out = mix_pair(a, b, gen_mask((1, 4, 4), 0.5, rng), "in")
    assert out.data.dtype == np.float32 and out.id == "in(a,b)"


def test_shape_and_class_errors():
    with pytest.raises(ShapeError):
        mix_pair(np.zeros((3,)), np.zeros((4,)), np.ones(3, np.uint8), "in")
    with pytest.raises(LabelError):
        mix_labels(LabelMap(np.zeros((2, 2)), 2), LabelMap(np.zeros((2, 2)), 3), np.ones((2, 2), np.uint8), "in")


def test_mixed_batch_shares_one_mask():
    rng = np.random.default_rng(3)
    vols = [Volume(rng.standard_normal((1, 1, 6, 6)).astype(np.float32), id=f"v{i}") for i in range(4)]
    labs = [LabelMap(rng.integers(0, 2, (1, 6, 6)), 2) for _ in range(4)]
    mask = gen_mask((1, 6, 6), 2 / 3, rng)
    mb = bcpmix.make_mixed_batch((vols[0], labs[0]), (vols[1], labs[1]), vols[2], vols[3], labs[2], labs[3], mask)
    on = mask.grid.astype(bool)
    assert np.array_equal(mb.x_in.data[:, on], vols[0].data[:, on])
    assert np.array_equal(mb.x_out.data[:, ~on], vols[1].data[:, ~on])
    assert np.array_equal(mb.y_out.grid[on], labs[3].grid[on])
    assert mb.provenance == ("v0", "v1", "v2", "v3")
