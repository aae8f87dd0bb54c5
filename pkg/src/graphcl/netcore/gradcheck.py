"""Finite-difference verification of hand-derived gradients.

Subgraphs register a builder that, given a seeded generator, returns a scalar
function of named arrays plus the arrays to perturb. ``grad_check`` compares the
analytic gradient of every array against central differences.
"""
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from .autodiff import Tensor, get_default_dtype, set_default_dtype


@dataclass
class Subgraph:
    name: str
    module: str
    build: Callable


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    passed: bool


@dataclass
class GradReport:
    subgraph: str
    seed: int
    tolerance: float
    entries: List[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_err(self):
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self):
        return all(e.passed for e in self.entries)


SUBGRAPHS: Dict[str, Subgraph] = {}


def register(name, module):
    def deco(build):
        SUBGRAPHS[name] = Subgraph(name, module, build)
        return build
    return deco


@contextmanager
def float64():
    prev = get_default_dtype()
    set_default_dtype(np.float64)
    try:
        yield
    finally:
        set_default_dtype(prev)


def rel_error(analytic, numeric):
    """Elementwise relative error with a floor tied to the array's gradient scale.

    The floor keeps entries whose true gradient is ~0 from dividing round-off by ~0.
    """
    scale = max(np.max(np.abs(numeric), initial=0.0), np.max(np.abs(analytic), initial=0.0))
    floor = max(1e-3 * scale, 1e-7)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom, initial=0.0))


def numeric_grad(fn, arrays, name, eps):
    arr = arrays[name]
    out = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn({k: Tensor(v) for k, v in arrays.items()}).item()
        flat[i] = orig - eps
        fm = fn({k: Tensor(v) for k, v in arrays.items()}).item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return out


def check_function(fn, arrays, tolerance=1e-4, eps=1e-5, label="custom", seed=0):
    """Run the comparison for an explicit function and parameter dict."""
    with float64():
        arrays = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
        report = GradReport(label, seed, tolerance)
        if not arrays:
            return report
        tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
        fn(tensors).backward()
        for name in arrays:
            analytic = tensors[name].grad
            if analytic is None:
                analytic = np.zeros_like(arrays[name])
            numeric = numeric_grad(fn, arrays, name, eps)
            err = rel_error(analytic, numeric)
            report.entries.append(ParamCheck(name, err, err <= tolerance))
        return report


def grad_check(subgraph_id, seed=0, tolerance=1e-4, eps=1e-5):
    if subgraph_id not in SUBGRAPHS:
        from .. import gradsuite  # noqa: F401  (registers the built-in subgraphs)
    sub = SUBGRAPHS[subgraph_id]
    with float64():
        fn, arrays = sub.build(np.random.default_rng(seed))
    return check_function(fn, arrays, tolerance, eps, label=subgraph_id, seed=seed)
