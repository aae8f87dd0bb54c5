"""Differentiable operators. Each backward closure returns one gradient per parent."""
import numpy as np

from .. import kernels
from ..errors import ShapeError
from .autodiff import Tensor, as_tensor, make_node, unbroadcast  # noqa: F401


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_node(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)

    return make_node(out, (a, b), backward)


def power(a, exponent):
    """Elementwise ``a ** exponent`` for a constant exponent."""
    a = as_tensor(a)
    out = a.data ** exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return make_node(out, (a,), backward)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * mask,))


def matmul(a, b):
    """``a @ b`` with numpy semantics for 2-D and batched (leading-axis) operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make_node(a.data @ b.data, (a, b), backward)


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),))


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_node(y, (x,), backward)


def max_all(x):
    """Scalar maximum over all entries; gradient routed to the first maximiser."""
    x = as_tensor(x)
    idx = np.unravel_index(np.argmax(x.data), x.shape)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return make_node(x.data[idx], (x,), backward)


def max_abs(x):
    """Scalar ``max |x|``; gradient routed to the first maximiser with its sign."""
    x = as_tensor(x)
    idx = np.unravel_index(np.argmax(np.abs(x.data)), x.shape)
    sign = np.sign(x.data[idx])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g * sign
        return (gx,)

    return make_node(np.abs(x.data[idx]), (x,), backward)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)
        ):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# spatial operators: x is (N, C, *S) with len(S) in {2, 3}


def conv(x, w, b=None):
    """3x3 (2-D) or 3x3x3 (3-D) convolution, stride 1, zero padding 1."""
    x, w = as_tensor(x), as_tensor(w)
    nsp = x.ndim - 2
    if nsp not in (2, 3) or w.ndim != nsp + 2 or w.shape[1] != x.shape[1] or any(
        s != 3 for s in w.shape[2:]
    ):
        raise ShapeError(f"conv: input {x.shape} incompatible with weight {w.shape}")
    N, C = x.shape[:2]
    spatial = x.shape[2:]
    cout = w.shape[0]
    cols = kernels.im2col(x.data).reshape(N, C * 3 ** nsp, -1)
    wmat = w.data.reshape(cout, -1)
    out = (wmat @ cols).reshape((N, cout) + spatial)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ShapeError(f"conv: bias {b.shape} does not match {cout} output channels")
        out = out + b.data.reshape((1, cout) + (1,) * nsp)
        parents.append(b)

    def backward(g):
        gm = g.reshape(N, cout, -1)
        gw = np.tensordot(gm, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gm).reshape((N, C, 3 ** nsp) + spatial)
            gx = kernels.col2im(gcols)
        grads = [gx, gw]
        if b is not None:
            grads.append(gm.sum(axis=(0, 2)))
        return tuple(grads)

    return make_node(out, parents, backward)


def channel_matmul(x, w, b=None):
    """1x1 convolution: mixes channels independently at every spatial position."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"channel_matmul: input {x.shape} incompatible with weight {w.shape}")
    N, C = x.shape[:2]
    spatial = x.shape[2:]
    xm = x.data.reshape(N, C, -1)
    out = (w.data @ xm).reshape((N, w.shape[0]) + spatial)
    parents = [x, w]
    nsp = len(spatial)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"channel_matmul: bias {b.shape} does not match weight {w.shape}")
        out = out + b.data.reshape((1, -1) + (1,) * nsp)
        parents.append(b)

    def backward(g):
        gm = g.reshape(N, w.shape[0], -1)
        grads = [(w.data.T @ gm).reshape(x.shape), np.tensordot(gm, xm, axes=([0, 2], [0, 2]))]
        if b is not None:
            grads.append(gm.sum(axis=(0, 2)))
        return tuple(grads)

    return make_node(out, parents, backward)


def _window_view(a, nsp):
    """(N, C, *S) -> (N, C, *S/2, 2**nsp) grouping each 2x2(x2) window on the last axis."""
    N, C = a.shape[:2]
    spatial = a.shape[2:]
    shape = [N, C]
    for s in spatial:
        shape += [s // 2, 2]
    v = a.reshape(shape)
    outer = [2 + 2 * i for i in range(nsp)]
    inner = [3 + 2 * i for i in range(nsp)]
    v = v.transpose([0, 1] + outer + inner)
    return v.reshape((N, C) + tuple(s // 2 for s in spatial) + (2 ** nsp,)), shape, outer, inner


def maxpool2(x):
    x = as_tensor(x)
    nsp = x.ndim - 2
    if nsp not in (2, 3) or any(s % 2 for s in x.shape[2:]):
        raise ShapeError(f"maxpool2: spatial dims of {x.shape} must be even")
    v, shape, outer, inner = _window_view(x.data, nsp)
    arg = v.argmax(axis=-1)
    out = np.take_along_axis(v, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gv = np.zeros(v.shape, dtype=g.dtype)
        np.put_along_axis(gv, arg[..., None], g[..., None], axis=-1)
        gv = gv.reshape(v.shape[:-1] + (2,) * nsp)
        perm = [0, 1]
        for i in range(nsp):
            perm += [2 + i, 2 + nsp + i]
        return (gv.transpose(perm).reshape(x.shape),)

    return make_node(out, (x,), backward)


def upsample2(x):
    """Nearest-neighbour x2 upsampling on every spatial axis."""
    x = as_tensor(x)
    nsp = x.ndim - 2
    out = x.data
    for ax in range(2, 2 + nsp):
        out = np.repeat(out, 2, axis=ax)

    def backward(g):
        shape = list(x.shape[:2])
        for s in x.shape[2:]:
            shape += [s, 2]
        axes = tuple(3 + 2 * i for i in range(nsp))
        return (g.reshape(shape).sum(axis=axes),)

    return make_node(out, (x,), backward)


def gap(x):
    """Global average pool: (N, C, *S) -> (N, C)."""
    x = as_tensor(x)
    N, C = x.shape[:2]
    return mean(reshape(x, (N, C, -1)), axis=2)


def dense(x, w, b=None):
    """Row-wise affine map ``x @ w + b`` for x of shape (..., d_in), w (d_in, d_out)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def rows(x, start, stop):
    """``x[start:stop]`` along the leading axis."""
    x = as_tensor(x)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return make_node(x.data[start:stop], (x,), backward)


def gram(x):
    """``x @ x.T`` for a 2-D ``x``; the lower triangle mirrors the upper one, so the
    result is symmetric to the last bit."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"gram: expected a 2-D matrix, got {x.shape}")
    a = x.data @ x.data.T
    a = np.triu(a) + np.triu(a, 1).T

    def backward(g):
        return ((g + g.T) @ x.data,)

    return make_node(a, (x,), backward)


__all__ = [
    "Tensor", "add", "sub", "mul", "div", "power", "exp", "log", "relu", "matmul",
    "transpose", "reshape", "sum", "mean", "softmax", "max_all", "max_abs", "concat",
    "conv", "channel_matmul", "maxpool2", "upsample2", "gap", "dense", "rows", "gram",
]
