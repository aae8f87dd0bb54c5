import json
import os

import numpy as np
import pytest

from graphcl import voldata
from graphcl.errors import (
    ConfigError,
    DatasetTooSmallError,
    LengthMismatchError,
    MissingSidecarError,
    NonFiniteDataError,
)
from graphcl.voldata import PhantomSpec, Volume, generate_phantoms, split_dataset

# foreground class counts for PhantomSpec(shape=(1, 64, 64), classes=4, seed=7),
# frozen from one generator run
K4_SEED7_COUNTS = [486, 291, 95]


def test_noiseless_foreground_is_background_plus_contrast():
    spec = PhantomSpec(n_volumes=3, shape=(1, 32, 32), classes=2, noise_sigma=0.0, background=0.25, contrast=1.5)
    for vol, lbl in generate_phantoms(spec):
        img = vol.data[0]
        assert np.all(img[lbl.grid == 1] == np.float32(0.25 + 1.5))
        assert np.all(img[lbl.grid == 0] == np.float32(0.25))
        assert lbl.grid.sum() > 0


def test_noiseless_threshold_reproduces_labels():
    spec = PhantomSpec(n_volumes=4, shape=(1, 48, 40), classes=4, noise_sigma=0.0, contrast=1.0)
    for vol, lbl in generate_phantoms(spec):
        recovered = np.floor(vol.data[0] + 0.5).astype(np.uint8)
        assert np.array_equal(recovered, lbl.grid)


def test_same_seed_is_byte_identical():
    spec = PhantomSpec(n_volumes=3, shape=(1, 32, 32), seed=11)
    a, b = generate_phantoms(spec), generate_phantoms(spec)
    for (va, la), (vb, lb) in zip(a, b):
        assert va.data.tobytes() == vb.data.tobytes()
        assert la.grid.tobytes() == lb.grid.tobytes()
        assert va.id == vb.id


def test_different_seed_differs():
    a = generate_phantoms(PhantomSpec(n_volumes=1, shape=(1, 32, 32), seed=1))[0][0]
    b = generate_phantoms(PhantomSpec(n_volumes=1, shape=(1, 32, 32), seed=2))[0][0]
    assert not np.array_equal(a.data, b.data)


def test_k4_class_counts_strictly_decrease():
    spec = PhantomSpec(n_volumes=1, shape=(1, 64, 64), classes=4, seed=7)
    _, lbl = generate_phantoms(spec)[0]
    counts = [int((lbl.grid == c).sum()) for c in range(1, 4)]
    assert counts == sorted(counts, reverse=True) and len(set(counts)) == 3
    assert counts == K4_SEED7_COUNTS


def test_3d_phantom_is_an_ellipsoid():
    spec = PhantomSpec(n_volumes=1, shape=(16, 16, 16), noise_sigma=0.0)
    vol, lbl = generate_phantoms(spec)[0]
    assert vol.data.shape == (1, 16, 16, 16)
    assert lbl.grid[:, :, :].sum() > 0
    # foreground is bounded away from every face in each axis
    assert 0 < lbl.grid.any(axis=(1, 2)).sum() < 16


@pytest.mark.parametrize("field,value", [
    ("radius_range", (0.3, 0.6)),
    ("radius_range", (0.0, 0.2)),
    ("noise_sigma", -1.0),
    ("classes", 1),
    ("n_volumes", 0),
    ("shape", (1, 0, 4)),
    ("contrast", 0.0),
])
def test_invalid_spec_names_the_field(field, value):
    with pytest.raises(ConfigError, match=field):
        PhantomSpec(**{field: value})


@pytest.mark.parametrize("ratio,a,b", [(0.05, 2, 38), (0.10, 4, 36), (0.5, 20, 20)])
def test_split_sizes(ratio, a, b):
    data = generate_phantoms(PhantomSpec(n_volumes=40, shape=(1, 8, 8)))
    split = split_dataset(data, ratio, seed=0)
    assert (len(split.labeled), len(split.unlabeled)) == (a, b)


def test_split_is_a_stable_partition():
    data = generate_phantoms(PhantomSpec(n_volumes=12, shape=(1, 8, 8)))
    s1, s2 = split_dataset(data, 0.25, seed=3), split_dataset(data, 0.25, seed=3)
    assert s1.labeled_ids == s2.labeled_ids and s1.unlabeled_ids == s2.unlabeled_ids
    ids = s1.labeled_ids + s1.unlabeled_ids
    assert sorted(ids) == sorted(v.id for v, _ in data)
    assert len(set(ids)) == len(ids)
    assert split_dataset(data, 0.25, seed=4).labeled_ids != s1.labeled_ids


def test_split_needs_four_volumes():
    data = generate_phantoms(PhantomSpec(n_volumes=3, shape=(1, 8, 8)))
    with pytest.raises(DatasetTooSmallError):
        split_dataset(data, 0.5)


def test_volume_rejects_non_finite():
    with pytest.raises(NonFiniteDataError):
        Volume(np.full((1, 1, 2, 2), np.nan, dtype=np.float32))


def test_volume_round_trip_is_bit_exact(tmp_path):
    for vol, lbl in generate_phantoms(PhantomSpec(n_volumes=2, shape=(3, 8, 6), spacing=(2.0, 0.5, 0.5))):
        path = voldata.write_volume(vol, str(tmp_path))
        back = voldata.read_volume(path)
        assert back.data.tobytes() == vol.data.astype("<f4").tobytes()
        assert back.spacing == vol.spacing and back.id == vol.id
        lpath = voldata.write_label(lbl, vol.id, str(tmp_path))
        assert voldata.read_label(lpath).grid.tobytes() == lbl.grid.tobytes()


def test_sidecar_format(tmp_path):
    vol, lbl = generate_phantoms(PhantomSpec(n_volumes=1, shape=(1, 4, 6)))[0]
    path = voldata.write_volume(vol, str(tmp_path))
    with open(path + ".json") as fh:
        meta = json.load(fh)
    assert meta == {"shape": [1, 1, 4, 6], "dtype": "f32", "order": "row-major", "spacing": [1.0, 1.0, 1.0]}
    assert os.path.getsize(path) == 24 * 4
    lpath = voldata.write_label(lbl, vol.id, str(tmp_path))
    with open(lpath + ".json") as fh:
        assert json.load(fh) == {"shape": [1, 4, 6], "classes": 2}


def test_truncated_blob_is_a_length_mismatch(tmp_path):
    vol, _ = generate_phantoms(PhantomSpec(n_volumes=1, shape=(1, 4, 4)))[0]
    path = voldata.write_volume(vol, str(tmp_path))
    with open(path, "rb") as fh:
        raw = fh.read()
    with open(path, "wb") as fh:
        fh.write(raw[:-1])
    with pytest.raises(LengthMismatchError):
        voldata.read_volume(path)


def test_sidecar_shape_disagreeing_with_blob(tmp_path):
    path = str(tmp_path / "x.vol")
    np.zeros(3, dtype="<f4").tofile(path)
    with open(path + ".json", "w") as fh:
        json.dump({"shape": [2, 2], "dtype": "f32", "order": "row-major"}, fh)
    with pytest.raises(LengthMismatchError):
        voldata.read_volume(path)


def test_missing_sidecar(tmp_path):
    path = str(tmp_path / "y.vol")
    np.zeros(4, dtype="<f4").tofile(path)
    with pytest.raises(MissingSidecarError):
        voldata.read_volume(path)


def test_non_finite_blob_is_rejected(tmp_path):
    vol, _ = generate_phantoms(PhantomSpec(n_volumes=1, shape=(1, 2, 2)))[0]
    path = voldata.write_volume(vol, str(tmp_path))
    np.array([1, np.inf, 0, 0], dtype="<f4").tofile(path)
    with pytest.raises(NonFiniteDataError):
        voldata.read_volume(path)


def test_dataset_manifest_round_trip(tmp_path):
    spec = PhantomSpec(n_volumes=5, shape=(1, 8, 8))
    pairs = generate_phantoms(spec)
    manifest = voldata.write_dataset(pairs, str(tmp_path), holdout=2, spec=spec)
    assert [e["split_eligible"] for e in manifest["volumes"]] == [True, True, True, False, False]
    train = voldata.read_dataset(str(tmp_path), eligible=True)
    held = voldata.read_dataset(str(tmp_path), eligible=False)
    assert [v.id for v, _ in train] == ["case_0000", "case_0001", "case_0002"]
    assert [v.id for v, _ in held] == ["case_0003", "case_0004"]
    for (a, la), (b, lb) in zip(pairs, train + held):
        assert np.array_equal(a.data, b.data) and np.array_equal(la.grid, lb.grid)
