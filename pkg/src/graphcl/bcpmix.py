"""Bidirectional copy-paste: one binary mask with a single zero block mixes a
labeled and an unlabeled sample in both directions."""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import LabelError, ShapeError
from .voldata import LabelMap, Volume

DEFAULT_ZERO_RATIO = 2.0 / 3.0


@dataclass
class MixMask:
    grid: np.ndarray          # uint8, spatial dims only
    zero_origin: Tuple[int, ...]
    zero_size: Tuple[int, ...]

    @property
    def ones(self):
        return int(self.grid.sum())

    @property
    def zeros(self):
        return int(self.grid.size - self.grid.sum())


@dataclass
class MixedBatch:
    x_in: Volume
    x_out: Volume
    y_in: LabelMap
    y_out: LabelMap
    mask: MixMask
    provenance: Tuple[str, str, str, str]   # (j, k, m, n)


def gen_mask(spatial_dims, zero_ratio=DEFAULT_ZERO_RATIO, rng=None):
    """All-ones mask except one axis-aligned zero block of ``floor(ratio * dim)`` per axis,
    placed uniformly at random."""
    dims = tuple(int(d) for d in spatial_dims)
    ratios = np.broadcast_to(np.asarray(zero_ratio, dtype=np.float64), (len(dims),))
    if np.any(ratios < 0) or np.any(ratios > 1):
        raise ValueError(f"zero_ratio entries must lie in [0, 1], got {tuple(ratios)}")
    rng = np.random.default_rng() if rng is None else rng
    # the 1e-9 keeps e.g. (74 / 112) * 112 from flooring to 73
    size = tuple(int(np.floor(r * d + 1e-9)) for r, d in zip(ratios, dims))
    origin = tuple(int(rng.integers(0, d - s + 1)) for d, s in zip(dims, size))
    grid = np.ones(dims, dtype=np.uint8)
    if all(s > 0 for s in size):
        grid[tuple(slice(o, o + s) for o, s in zip(origin, size))] = 0
    return MixMask(grid, origin, size)


def _mask_grid(m):
    return m.grid if isinstance(m, MixMask) else np.asarray(m)


def _select(keep, other, grid, direction):
    """direction "in": keep where M = 1, other where M = 0; "out" mirrors it."""
    if keep.shape != other.shape:
        raise ShapeError(f"cannot mix shapes {keep.shape} and {other.shape}")
    if keep.shape[-grid.ndim:] != grid.shape:
        raise ShapeError(f"mask {grid.shape} does not match sample {keep.shape}")
    on = grid.astype(bool)
    if direction == "in":
        return np.where(on, keep, other)
    if direction == "out":
        return np.where(on, other, keep)
    raise ValueError(f"direction must be 'in' or 'out', got {direction!r}")


def mix_pair(xl, xu, m, direction):
    """``in``: ``xl*M + xu*(1-M)``; ``out``: ``xu*M + xl*(1-M)``. Each voxel is copied
    from exactly one source, so results are exact."""
    grid = _mask_grid(m)
    if isinstance(xl, Volume):
        data = _select(xl.data, xu.data, grid, direction)
        return Volume(data, xl.spacing, f"{direction}({xl.id},{xu.id})")
    return _select(np.asarray(xl), np.asarray(xu), grid, direction)


def mix_labels(yl, yu, m, direction):
    """Label counterpart of :func:`mix_pair`."""
    grid = _mask_grid(m)
    if isinstance(yl, LabelMap):
        if not isinstance(yu, LabelMap) or yl.classes != yu.classes:
            raise LabelError(f"class count mismatch: {yl.classes} vs {getattr(yu, 'classes', None)}")
        return LabelMap(_select(yl.grid, yu.grid, grid, direction), yl.classes)
    return _select(np.asarray(yl), np.asarray(yu), grid, direction)


def make_mixed_batch(labeled_j, labeled_k, unlabeled_m, unlabeled_n, pseudo_m, pseudo_n, mask):
    """Both mixed samples of one (labeled pair, unlabeled pair) draw, sharing ``mask``.

    ``labeled_*`` are (Volume, LabelMap) pairs; ``pseudo_*`` are the teacher's label maps.
    """
    (xj, yj), (xk, yk) = labeled_j, labeled_k
    x_in = mix_pair(xj, unlabeled_m, mask, "in")
    y_in = mix_labels(yj, pseudo_m, mask, "in")
    x_out = mix_pair(xk, unlabeled_n, mask, "out")
    y_out = mix_labels(yk, pseudo_n, mask, "out")
    return MixedBatch(x_in, x_out, y_in, y_out, mask, (xj.id, xk.id, unlabeled_m.id, unlabeled_n.id))
