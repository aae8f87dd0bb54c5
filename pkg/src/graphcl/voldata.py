"""Volumes, label maps, synthetic phantoms, dataset splits and raw-blob file I/O.

Grids are stored channel-first as (C, D, H, W); a 2-D image is a volume with D = 1.
On disk a volume is a little-endian float32 blob plus a JSON sidecar, a label map
an uint8 blob plus sidecar.
"""
import json
import os
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .errors import (
    ConfigError,
    DataIOError,
    DatasetTooSmallError,
    LabelError,
    LengthMismatchError,
    MissingSidecarError,
    NonFiniteDataError,
    ShapeError,
)
from .netcore.params import substream


@dataclass
class Volume:
    data: np.ndarray                     # (C, D, H, W)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)  # (D, H, W)
    id: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 4 or min(self.data.shape) < 1:
            raise ShapeError(f"volume {self.id!r}: expected positive (C, D, H, W), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteDataError(f"volume {self.id!r} contains non-finite values")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ShapeError(f"volume {self.id!r}: spacing must be 3 positive values, got {self.spacing}")

    @property
    def spatial_shape(self):
        return self.data.shape[1:]


@dataclass
class LabelMap:
    grid: np.ndarray   # (D, H, W) integer
    classes: int = 2

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        if self.classes < 2:
            raise LabelError(f"label map needs at least 2 classes, got {self.classes}")
        if self.grid.size and (self.grid.min() < 0 or self.grid.max() >= self.classes):
            raise LabelError(f"label values outside [0, {self.classes - 1}]")
        self.grid = self.grid.astype(np.uint8)


@dataclass
class DatasetSplit:
    labeled: List[Tuple[Volume, LabelMap]]
    unlabeled: List[Volume]
    seed: int = 0

    def __post_init__(self):
        if len(self.labeled) < 2 or len(self.unlabeled) < 2:
            raise DatasetTooSmallError(
                f"split needs >= 2 labeled and >= 2 unlabeled volumes, got {len(self.labeled)}/{len(self.unlabeled)}"
            )
        overlap = {v.id for v, _ in self.labeled} & {v.id for v in self.unlabeled}
        if overlap:
            raise ConfigError(f"volumes in both labeled and unlabeled sets: {sorted(overlap)}")

    @property
    def labeled_ids(self):
        return [v.id for v, _ in self.labeled]

    @property
    def unlabeled_ids(self):
        return [v.id for v in self.unlabeled]


@dataclass
class PhantomSpec:
    n_volumes: int = 40
    shape: Tuple[int, int, int] = (1, 128, 128)   # (D, H, W)
    classes: int = 2
    radius_range: Tuple[float, float] = (0.18, 0.38)
    noise_sigma: float = 0.5
    contrast: float = 1.0
    seed: int = 0
    background: float = 0.0
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    id_prefix: str = "case"

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.radius_range = tuple(float(r) for r in self.radius_range)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.validate()

    def validate(self):
        if int(self.n_volumes) < 1:
            raise ConfigError(f"n_volumes: must be >= 1, got {self.n_volumes}")
        if len(self.shape) != 3 or min(self.shape) < 1:
            raise ConfigError(f"shape: expected 3 positive ints (D, H, W), got {self.shape}")
        if int(self.classes) < 2:
            raise ConfigError(f"classes: must be >= 2, got {self.classes}")
        lo, hi = self.radius_range if len(self.radius_range) == 2 else (None, None)
        if lo is None or not 0 < lo <= hi < 0.5:
            raise ConfigError(f"radius_range: must satisfy 0 < lo <= hi < 0.5, got {self.radius_range}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma: must be >= 0, got {self.noise_sigma}")
        if self.contrast <= 0:
            raise ConfigError(f"contrast: must be > 0, got {self.contrast}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ConfigError(f"spacing: must be 3 positive values, got {self.spacing}")


def _phantom(spec, index):
    rng = substream(spec.seed, f"phantom/{index}")
    D, H, W = spec.shape
    dims = np.array([D, H, W], dtype=np.float64)
    lo, hi = spec.radius_range
    radii = rng.uniform(lo, hi, size=3) * dims
    # a singleton axis is not constrained (2-D mode)
    active = dims > 1
    centre = np.where(active, rng.uniform(radii, dims - radii), (dims - 1) / 2)
    axes = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in (D, H, W)), indexing="ij")
    rho2 = np.zeros((D, H, W))
    for a in range(3):
        if active[a]:
            rho2 += ((axes[a] - centre[a]) / radii[a]) ** 2
    k = spec.classes
    labels = np.zeros((D, H, W), dtype=np.uint8)
    for c in range(1, k):
        scale = (k - c) / (k - 1)     # class c shell nested inside class c - 1
        labels[rho2 <= scale * scale] = c
    image = spec.background + spec.contrast * labels.astype(np.float64)
    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, size=image.shape)
    vid = f"{spec.id_prefix}_{index:04d}"
    return Volume(image[None].astype(np.float32), spec.spacing, vid), LabelMap(labels, k)


def generate_phantoms(spec):
    """Nested-ellipsoid phantoms, deterministic in ``spec`` (including its seed)."""
    if not isinstance(spec, PhantomSpec):
        spec = PhantomSpec(**spec)
    spec.validate()
    return [_phantom(spec, i) for i in range(int(spec.n_volumes))]


def split_dataset(data, labeled_ratio, seed=0):
    """Seeded shuffle; the first ``max(2, round(ratio * N))`` become labeled."""
    n = len(data)
    if n < 4:
        raise DatasetTooSmallError(f"need at least 4 volumes to split, got {n}")
    if not 0 < labeled_ratio < 1:
        raise ConfigError(f"labeled_ratio must lie in (0, 1), got {labeled_ratio}")
    a = max(2, int(np.floor(labeled_ratio * n + 0.5)))
    if n - a < 2:
        raise DatasetTooSmallError(f"ratio {labeled_ratio} leaves fewer than 2 unlabeled of {n}")
    order = substream(seed, "split").permutation(n)
    labeled = [data[i] for i in order[:a]]
    unlabeled = [data[i][0] for i in order[a:]]
    return DatasetSplit(labeled, unlabeled, seed)


# file I/O


def _write_atomic(path, payload):
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _sidecar(path):
    side = path + ".json"
    if not os.path.exists(side):
        raise MissingSidecarError(f"missing sidecar {side}")
    try:
        with open(side) as fh:
            return json.load(fh)
    except ValueError as exc:
        raise DataIOError(f"unreadable sidecar {side}: {exc}") from exc


def _blob(path, itemsize, shape):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    expected = int(np.prod(shape, dtype=np.int64)) * itemsize
    if len(raw) != expected:
        raise LengthMismatchError(f"{path}: {len(raw)} bytes, sidecar shape {list(shape)} implies {expected}")
    return raw


def write_volume(volume, directory):
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, volume.id + ".vol")
    meta = {
        "shape": list(volume.data.shape),
        "dtype": "f32",
        "order": "row-major",
        "spacing": list(volume.spacing),
    }
    _write_atomic(path, np.ascontiguousarray(volume.data, dtype="<f4").tobytes())
    _write_atomic(path + ".json", (json.dumps(meta) + "\n").encode())
    return path


def read_volume(path):
    meta = _sidecar(path)
    if meta.get("dtype") != "f32" or meta.get("order", "row-major") != "row-major":
        raise DataIOError(f"{path}: unsupported dtype/order {meta.get('dtype')}/{meta.get('order')}")
    shape = tuple(meta["shape"])
    raw = _blob(path, 4, shape)
    data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise NonFiniteDataError(f"{path}: non-finite values")
    if len(shape) == 3:
        data = data[None]
    vid = os.path.basename(path)[: -len(".vol")] if path.endswith(".vol") else os.path.basename(path)
    return Volume(data, tuple(meta.get("spacing", (1.0, 1.0, 1.0))), vid)


def write_label(label, vid, directory):
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, vid + ".lbl")
    _write_atomic(path, np.ascontiguousarray(label.grid, dtype=np.uint8).tobytes())
    _write_atomic(path + ".json", (json.dumps({"shape": list(label.grid.shape), "classes": label.classes}) + "\n").encode())
    return path


def read_label(path):
    meta = _sidecar(path)
    shape = tuple(meta["shape"])
    raw = _blob(path, 1, shape)
    return LabelMap(np.frombuffer(raw, dtype=np.uint8).reshape(shape).copy(), int(meta["classes"]))


@dataclass
class Manifest:
    entries: List[dict] = field(default_factory=list)
    classes: int = 2

    def ids(self, eligible=None):
        return [e["id"] for e in self.entries if eligible is None or e["split_eligible"] == eligible]


def write_dataset(pairs, directory, holdout=0, spec=None):
    """Write volumes, labels and ``manifest.json``; the last ``holdout`` pairs are held out."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, (vol, lbl) in enumerate(pairs):
        write_volume(vol, directory)
        write_label(lbl, vol.id, directory)
        entries.append({"id": vol.id, "split_eligible": i < len(pairs) - holdout})
    manifest = {"volumes": entries, "classes": pairs[0][1].classes if pairs else 2}
    if spec is not None:
        manifest["phantom"] = _spec_dict(spec)
    _write_atomic(os.path.join(directory, "manifest.json"), (json.dumps(manifest, indent=1) + "\n").encode())
    return manifest


def _spec_dict(spec):
    return {
        "n_volumes": spec.n_volumes, "shape": list(spec.shape), "classes": spec.classes,
        "radius_range": list(spec.radius_range), "noise_sigma": spec.noise_sigma,
        "contrast": spec.contrast, "seed": spec.seed, "background": spec.background,
        "spacing": list(spec.spacing), "id_prefix": spec.id_prefix,
    }


def read_manifest(directory):
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise MissingSidecarError(f"dataset manifest not found: {path}")
    with open(path) as fh:
        raw = json.load(fh)
    return Manifest(raw["volumes"], raw.get("classes", 2))


def read_dataset(directory, eligible=None):
    """Load ``(Volume, LabelMap)`` pairs listed in the manifest, in manifest order."""
    manifest = read_manifest(directory)
    pairs = []
    for vid in manifest.ids(eligible):
        vol = read_volume(os.path.join(directory, vid + ".vol"))
        lbl = read_label(os.path.join(directory, vid + ".lbl"))
        if lbl.grid.shape != vol.spatial_shape:
            raise ShapeError(f"{vid}: label {lbl.grid.shape} vs volume {vol.spatial_shape}")
        pairs.append((vol, lbl))
    return pairs
