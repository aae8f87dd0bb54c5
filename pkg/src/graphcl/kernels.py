"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
``GRAPHCL_BACKEND=python`` forces the fallback, ``GRAPHCL_BACKEND=ext`` makes a
missing extension an import error.
"""
import os

import numpy as np

from . import _kernels_py

_requested = os.environ.get("GRAPHCL_BACKEND", "auto").lower()

if _requested == "python":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        if _requested == "ext":
            raise
        _impl = _kernels_py

BACKEND = "ext" if _impl is not _kernels_py else "python"


def im2col(x):
    """(N, C, *S) -> (N, C, K, *S) with K = 3**len(S), zero padding 1."""
    x = np.ascontiguousarray(x)
    if x.ndim == 4:
        return _impl.im2col2d(x)
    return _impl.im2col3d(x)


def col2im(cols):
    """Adjoint of :func:`im2col`."""
    cols = np.ascontiguousarray(cols)
    if cols.ndim == 5:
        return _impl.col2im2d(cols)
    return _impl.col2im3d(cols)


def nearest_distances(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return _impl.nearest_distances(a, b)
