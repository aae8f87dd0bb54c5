"""Pure-numpy twins of the compiled kernels in ``_kernels.pyx``."""
import itertools

import numpy as np

_OFFSETS_2D = list(itertools.product(range(3), repeat=2))
_OFFSETS_3D = list(itertools.product(range(3), repeat=3))

# rows of b processed per block in nearest_distances; bounds peak memory
_BLOCK = 2048


def im2col2d(x):
    N, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.empty((N, C, 9, H, W), dtype=x.dtype)
    for k, (i, j) in enumerate(_OFFSETS_2D):
        out[:, :, k] = xp[:, :, i:i + H, j:j + W]
    return out


def col2im2d(cols):
    N, C, _, H, W = cols.shape
    xp = np.zeros((N, C, H + 2, W + 2), dtype=cols.dtype)
    for k, (i, j) in enumerate(_OFFSETS_2D):
        xp[:, :, i:i + H, j:j + W] += cols[:, :, k]
    return np.ascontiguousarray(xp[:, :, 1:-1, 1:-1])


def im2col3d(x):
    N, C, D, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    out = np.empty((N, C, 27, D, H, W), dtype=x.dtype)
    for k, (h, i, j) in enumerate(_OFFSETS_3D):
        out[:, :, k] = xp[:, :, h:h + D, i:i + H, j:j + W]
    return out


def col2im3d(cols):
    N, C, _, D, H, W = cols.shape
    xp = np.zeros((N, C, D + 2, H + 2, W + 2), dtype=cols.dtype)
    for k, (h, i, j) in enumerate(_OFFSETS_3D):
        xp[:, :, h:h + D, i:i + H, j:j + W] += cols[:, :, k]
    return np.ascontiguousarray(xp[:, :, 1:-1, 1:-1, 1:-1])


def nearest_distances(a, b):
    """For every row of ``a`` the Euclidean distance to the closest row of ``b``."""
    best = np.full(a.shape[0], np.inf)
    for start in range(0, b.shape[0], _BLOCK):
        blk = b[start:start + _BLOCK]
        diff = a[:, None, :] - blk[None, :, :]
        d2 = diff[..., 0] * diff[..., 0]
        for t in range(1, a.shape[1]):
            d2 = d2 + diff[..., t] * diff[..., t]
        np.minimum(best, d2.min(axis=1), out=best)
    return np.sqrt(best)
