import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphcl import segmetrics
from graphcl.errors import ShapeError
from graphcl.segmetrics import dice_jaccard, evaluate_volume, extract_surface, hd95_asd

from .oracles import brute_directed, brute_surface


def _metrics(p, g, spacing=None):
    return hd95_asd(extract_surface(p), extract_surface(g), spacing, p.shape)


def brute_hd95_asd(p, g, spacing):
    sp = np.asarray(spacing, dtype=np.float64)
    a, b = brute_surface(p), brute_surface(g)
    d_ab, d_ba = brute_directed(a, b, sp), brute_directed(b, a, sp)
    return max(np.percentile(d_ab, 95), np.percentile(d_ba, 95)), np.concatenate([d_ab, d_ba]).mean()


def _random_mask(rng, shape, p=0.3):
    m = rng.random(shape) < p
    m[tuple(s // 2 for s in shape)] = True
    return m


def test_dice_examples():
    a = np.zeros((4, 4), int)
    a[:2, :2] = 1
    assert dice_jaccard(a, a) == (1.0, 1.0)
    b = np.zeros((4, 4), int)
    b[:2, 1:3] = 1
    assert dice_jaccard(a, b) == (0.5, pytest.approx(1 / 3))
    z = np.zeros((3, 3), int)
    assert dice_jaccard(z, z) == (1.0, 1.0)
    assert dice_jaccard(a, np.zeros((4, 4), int)) == (0.0, 0.0)
    with pytest.raises(ShapeError):
        dice_jaccard(a, z)


def test_dice_jaccard_identity(rng):
    for _ in range(100):
        p, g = _random_mask(rng, (9, 7)), _random_mask(rng, (9, 7))
        d, j = dice_jaccard(p.astype(int), g.astype(int))
        assert abs(d - 2 * j / (1 + j)) <= 1e-12
        assert 0 <= j <= d <= 1


def test_surface_examples():
    sq = np.zeros((5, 5), bool)
    sq[1:4, 1:4] = True
    assert len(extract_surface(sq).points) == 8
    one = np.zeros((3, 3, 3), bool)
    one[1, 1, 1] = True
    assert extract_surface(one).points.tolist() == [[1, 1, 1]]
    full = np.ones((4, 5), bool)
    assert len(extract_surface(full).points) == 4 * 5 - 2 * 3


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), three_d=st.booleans())
def test_surface_matches_brute_force(seed, three_d):
    rng = np.random.default_rng(seed)
    m = _random_mask(rng, (5, 6, 4) if three_d else (9, 8), 0.5)
    assert extract_surface(m).points.tolist() == brute_surface(m).tolist()


def test_distance_examples():
    a, b = np.zeros((1, 8), bool), np.zeros((1, 8), bool)
    a[0, 1], b[0, 4] = True, True
    assert _metrics(a, b)[:2] == (3.0, 3.0)
    assert _metrics(a, a)[:2] == (0.0, 0.0)


def test_empty_surface_sentinel():
    a = np.zeros((6, 8), bool)
    b = a.copy()
    b[2, 2] = True
    hd, asd, ep, eg = hd95_asd(extract_surface(a), extract_surface(b), (2.0, 1.0), a.shape)
    assert hd == asd == pytest.approx(np.sqrt(12 ** 2 + 8 ** 2))
    assert ep and not eg


@pytest.mark.parametrize("shape", [(32, 32), (16, 16, 16)])
def test_agrees_with_all_pairs_oracle(shape, rng):
    for trial in range(4):
        p, g = _random_mask(rng, shape, 0.2), _random_mask(rng, shape, 0.2)
        spacing = rng.uniform(0.5, 2.0, size=len(shape))
        hd, asd, _, _ = _metrics(p, g, spacing)
        bhd, basd = brute_hd95_asd(p, g, spacing)
        assert abs(hd - bhd) <= 1e-9 and abs(asd - basd) <= 1e-9


def test_symmetry_translation_and_spacing(rng):
    p, g = np.zeros((20, 20), bool), np.zeros((20, 20), bool)
    p[3:9, 4:12], g[5:12, 2:9] = True, True
    base = _metrics(p, g)
    assert _metrics(g, p)[:2] == base[:2]
    shifted = _metrics(np.roll(p, (3, 2), (0, 1)), np.roll(g, (3, 2), (0, 1)))
    assert shifted[:2] == pytest.approx(base[:2], abs=1e-12)
    doubled = _metrics(p, g, (2.0, 2.0))
    assert doubled[0] == 2 * base[0] and doubled[1] == 2 * base[1]
    assert dice_jaccard(p.astype(int), g.astype(int)) == dice_jaccard(p.astype(int), g.astype(int))


def test_evaluate_volume_squeezes_single_slice():
    g = np.zeros((1, 8, 8), np.uint8)
    g[0, 2:5, 2:6] = 1
    recs = evaluate_volume(g, g, 2, (5.0, 1.0, 1.0), "v")
    assert len(recs) == 1 and recs[0].dice == 1.0 and recs[0].hd95 == 0.0
    # a depth-1 volume has no depth neighbours, so the surface is the 2-D ring
    ring = evaluate_volume(g, np.roll(g, 1, axis=2), 2, (5.0, 1.0, 1.0), "v")[0]
    assert ring.hd95 == 1.0


def test_csv_layout(tmp_path):
    rng = np.random.default_rng(0)
    recs = []
    for i in range(3):
        g = rng.integers(0, 3, size=(1, 6, 6)).astype(np.uint8)
        recs += evaluate_volume(g, g, 3, None, f"v{i}")
    text = segmetrics.write_csv(recs, str(tmp_path / "m.csv"))
    lines = text.strip().split("\n")
    assert lines[0] == "volume_id,class,dice,jaccard,hd95,asd,empty_pred,empty_gt"
    assert len(lines) == 1 + 3 * 2 + 2
    assert lines[-1].startswith("mean,2,1.0,1.0,")
