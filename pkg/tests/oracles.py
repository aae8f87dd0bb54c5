"""Independent brute-force references used by the tests."""
import itertools

import numpy as np


def cc_double_sum(w, s):
    n = w.shape[0]
    return -sum(w[i, j] * float(np.dot(s[i], s[j])) for i in range(n) for j in range(n))


def one_hot_assignments(n, k):
    """Every labelling of n nodes with at most k labels, as one-hot (n, k) matrices."""
    for labels in itertools.product(range(k), repeat=n):
        s = np.zeros((n, k))
        s[np.arange(n), labels] = 1.0
        yield labels, s


def partition_objective(w, labels):
    """Sum of W_ij over ordered same-cluster pairs (i, j), diagonal included."""
    n = len(labels)
    return sum(w[i, j] for i in range(n) for j in range(n) if labels[i] == labels[j])


def set_partitions(n, max_blocks):
    """Restricted growth strings: each partition of range(n) once, <= max_blocks blocks."""
    def rec(prefix, used):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for b in range(min(used + 1, max_blocks)):
            yield from rec(prefix + [b], max(used, b + 1))
    yield from rec([], 0)


def brute_directed(a, b, spacing):
    a = np.asarray(a, dtype=np.float64) * spacing
    b = np.asarray(b, dtype=np.float64) * spacing
    # full all-pairs distance matrix, no blocking or pruning
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)).min(axis=1)


def brute_surface(mask):
    """Foreground voxels with a face neighbour that is background or off-grid."""
    m = np.asarray(mask, dtype=bool)
    pts = []
    for idx in zip(*np.nonzero(m)):
        for ax in range(m.ndim):
            for d in (-1, 1):
                nb = list(idx)
                nb[ax] += d
                if not 0 <= nb[ax] < m.shape[ax] or not m[tuple(nb)]:
                    pts.append(idx)
                    break
            else:
                continue
            break
    return np.array(pts, dtype=np.int64).reshape(-1, m.ndim)
