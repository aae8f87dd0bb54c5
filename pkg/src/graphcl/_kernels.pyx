# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: 3x3(x3) patch extraction/scatter and nearest-point distances.

Accumulation order matches ``_kernels_py`` exactly, so both backends agree bitwise.
"""
import numpy as np
from libc.math cimport sqrt

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _lo(Py_ssize_t d) nogil:
    return -d if d < 0 else 0


cdef inline Py_ssize_t _hi(Py_ssize_t d, Py_ssize_t n) nogil:
    return n - d if d > 0 else n


# Valid output ranges are hoisted out of the inner loops: position y reads y + dy,
# which is in bounds exactly for y in [_lo(dy), _hi(dy, H)).

def im2col2d(real[:, :, :, ::1] x):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((N, C, 9, H, W), dtype=dtype)
    cdef real[:, :, :, :, ::1] o = out
    cdef Py_ssize_t n, c, k, y, xx, dy, dx
    with nogil:
        for n in range(N):
            for c in range(C):
                for k in range(9):
                    dy = k // 3 - 1
                    dx = k % 3 - 1
                    for y in range(_lo(dy), _hi(dy, H)):
                        for xx in range(_lo(dx), _hi(dx, W)):
                            o[n, c, k, y, xx] = x[n, c, y + dy, xx + dx]
    return out


def col2im2d(real[:, :, :, :, ::1] cols):
    cdef Py_ssize_t N = cols.shape[0], C = cols.shape[1], H = cols.shape[3], W = cols.shape[4]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((N, C, H, W), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    cdef Py_ssize_t n, c, k, y, xx, dy, dx
    with nogil:
        for n in range(N):
            for c in range(C):
                for k in range(9):
                    dy = k // 3 - 1
                    dx = k % 3 - 1
                    for y in range(_lo(dy), _hi(dy, H)):
                        for xx in range(_lo(dx), _hi(dx, W)):
                            o[n, c, y + dy, xx + dx] += cols[n, c, k, y, xx]
    return out


def im2col3d(real[:, :, :, :, ::1] x):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3], W = x.shape[4]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((N, C, 27, D, H, W), dtype=dtype)
    cdef real[:, :, :, :, :, ::1] o = out
    cdef Py_ssize_t n, c, k, z, y, xx, dz, dy, dx
    with nogil:
        for n in range(N):
            for c in range(C):
                for k in range(27):
                    dz = k // 9 - 1
                    dy = (k // 3) % 3 - 1
                    dx = k % 3 - 1
                    for z in range(_lo(dz), _hi(dz, D)):
                        for y in range(_lo(dy), _hi(dy, H)):
                            for xx in range(_lo(dx), _hi(dx, W)):
                                o[n, c, k, z, y, xx] = x[n, c, z + dz, y + dy, xx + dx]
    return out


def col2im3d(real[:, :, :, :, :, ::1] cols):
    cdef Py_ssize_t N = cols.shape[0], C = cols.shape[1]
    cdef Py_ssize_t D = cols.shape[3], H = cols.shape[4], W = cols.shape[5]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((N, C, D, H, W), dtype=dtype)
    cdef real[:, :, :, :, ::1] o = out
    cdef Py_ssize_t n, c, k, z, y, xx, dz, dy, dx
    with nogil:
        for n in range(N):
            for c in range(C):
                for k in range(27):
                    dz = k // 9 - 1
                    dy = (k // 3) % 3 - 1
                    dx = k % 3 - 1
                    for z in range(_lo(dz), _hi(dz, D)):
                        for y in range(_lo(dy), _hi(dy, H)):
                            for xx in range(_lo(dx), _hi(dx, W)):
                                o[n, c, z + dz, y + dy, xx + dx] += cols[n, c, k, z, y, xx]
    return out


def nearest_distances(double[:, ::1] a, double[:, ::1] b):
    """For every row of ``a`` the Euclidean distance to the closest row of ``b``."""
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], dim = a.shape[1]
    out = np.empty(na, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i, j, t
    cdef double best, d2, diff
    with nogil:
        for i in range(na):
            best = 1e308
            for j in range(nb):
                d2 = 0.0
                for t in range(dim):
                    diff = a[i, t] - b[j, t]
                    d2 = d2 + diff * diff
                if d2 < best:
                    best = d2
            o[i] = sqrt(best)
    return out
