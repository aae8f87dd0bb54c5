"""In-place optimisers over a :class:`ParamStore` and the step-decay schedule."""
import numpy as np

from ..errors import ConfigError, NumericError, ShapeError


def lr_schedule(iteration, base_lr, decay=0.9, period=2500):
    """Step decay: ``base_lr * decay ** (iteration // period)``."""
    if period <= 0:
        raise ConfigError(f"lr period must be positive, got {period}")
    return base_lr * decay ** (iteration // period)


def _checked(params, grads):
    for name, g in grads.items():
        if g is None:
            continue
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient {name!r} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name!r}")
        yield name, g


class SGD:
    def __init__(self, momentum=0.9):
        self.momentum = momentum
        self.buffers = {}

    def step(self, params, grads, lr):
        for name, g in _checked(params, grads):
            if self.momentum:
                buf = self.buffers.get(name)
                buf = g.copy() if buf is None else self.momentum * buf + g
                self.buffers[name] = buf
                g = buf
            p = params[name]
            p -= lr * g


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, {}

    def step(self, params, grads, lr):
        for name, g in _checked(params, grads):
            t = self.t.get(name, 0) + 1
            m = self.beta1 * self.m.get(name, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(name, 0.0) + (1 - self.beta2) * g * g
            self.t[name], self.m[name], self.v[name] = t, m, v
            mhat = m / (1 - self.beta1 ** t)
            vhat = v / (1 - self.beta2 ** t)
            p = params[name]
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)


def sgd_step(params, grads, lr, momentum=0.0, state=None):
    """One SGD update; pass the returned state back in to keep momentum buffers."""
    state = state or SGD(momentum)
    state.step(params, grads, lr)
    return state


def adam_step(params, grads, lr, state=None):
    state = state or Adam()
    state.step(params, grads, lr)
    return state


def make_optimizer(kind, momentum=0.9):
    if kind == "sgd":
        return SGD(momentum)
    if kind == "adam":
        return Adam()
    raise ConfigError(f"unknown optimizer {kind!r}")
