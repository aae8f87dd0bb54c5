"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel and shape: best-of-N seconds for each backend and the
ratio. Exits non-zero if the compiled extension is not importable.
"""
import argparse
import sys
import timeit

import numpy as np

from graphcl import _kernels_py

try:
    from graphcl import _kernels as ext
except ImportError:
    ext = None

CASES = [
    ("im2col2d", lambda r: (r.standard_normal((4, 8, 128, 128)).astype(np.float32),)),
    ("im2col2d", lambda r: (r.standard_normal((4, 32, 32, 32)).astype(np.float32),)),
    ("col2im2d", lambda r: (r.standard_normal((4, 8, 9, 128, 128)).astype(np.float32),)),
    ("im2col3d", lambda r: (r.standard_normal((1, 4, 16, 32, 32)).astype(np.float32),)),
    ("col2im3d", lambda r: (r.standard_normal((1, 4, 27, 16, 32, 32)).astype(np.float32),)),
    ("nearest_distances", lambda r: (r.uniform(0, 128, (400, 2)), r.uniform(0, 128, (500, 2)))),
    ("nearest_distances", lambda r: (r.uniform(0, 64, (3000, 3)), r.uniform(0, 64, (3000, 3)))),
]


def best(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def describe(args):
    return " x ".join(str(a.shape) for a in args)


def main(argv=None):
    p = argparse.ArgumentParser(description="compiled vs numpy kernel timings")
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if ext is None:
        print("compiled extension graphcl._kernels is not built", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':18s} {'shape':34s} {'ext [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}")
    for name, make in CASES:
        data = make(rng)
        t_ext = best(getattr(ext, name), data, args.repeat)
        t_py = best(getattr(_kernels_py, name), data, args.repeat)
        same = getattr(ext, name)(*data).tobytes() == getattr(_kernels_py, name)(*data).tobytes()
        flag = "" if same else "  MISMATCH"
        print(f"{name:18s} {describe(data):34s} {t_ext:10.4f} {t_py:10.4f} {t_py / t_ext:8.2f}{flag}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
