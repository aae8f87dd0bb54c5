"""Small U-Net style encoder-decoder with a feature tap at one encoder level."""
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from ..errors import ConfigError, ShapeError, StateError
from . import ops
from .autodiff import Tensor
from .params import init_uniform


@dataclass
class BackboneConfig:
    levels: int = 3
    base_channels: int = 8
    classes: int = 2
    mode: str = "2d"
    gcn_level: Optional[int] = None
    in_channels: int = 1

    def __post_init__(self):
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")
        if self.gcn_level is None:
            self.gcn_level = self.levels
        if not 1 <= self.gcn_level <= self.levels:
            raise ConfigError(f"gcn_level must lie in [1, {self.levels}], got {self.gcn_level}")
        if self.mode not in ("2d", "3d"):
            raise ConfigError(f"mode must be '2d' or '3d', got {self.mode!r}")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")

    @property
    def ndim(self):
        return 2 if self.mode == "2d" else 3

    def channels(self, level):
        """Feature width of encoder level ``level`` (1-based)."""
        return self.base_channels * 2 ** (level - 1)

    def to_dict(self):
        return asdict(self)


class BackboneOutput(NamedTuple):
    logits: Tensor
    deep: Tensor        # deepest encoder map as consumed by the decoder
    tapped: Tensor      # encoder map at gcn_level before any replacement


def _conv_shapes(cfg):
    k = 3 ** cfg.ndim
    kernel = (3,) * cfg.ndim
    shapes = []
    cin = cfg.in_channels
    for level in range(1, cfg.levels + 1):
        c = cfg.channels(level)
        shapes.append((f"enc{level}.conv1", (c, cin) + kernel, cin * k))
        shapes.append((f"enc{level}.conv2", (c, c) + kernel, c * k))
        cin = c
    for level in range(cfg.levels - 1, 0, -1):
        c = cfg.channels(level)
        cup = cfg.channels(level + 1) + c
        shapes.append((f"dec{level}.conv1", (c, cup) + kernel, cup * k))
        shapes.append((f"dec{level}.conv2", (c, c) + kernel, c * k))
    return shapes


def backbone_param_shapes(cfg):
    out = {}
    for name, shape, _ in _conv_shapes(cfg):
        out[name + ".w"] = shape
        out[name + ".b"] = (shape[0],)
    out["head.w"] = (cfg.classes, cfg.base_channels)
    out["head.b"] = (cfg.classes,)
    return out


def init_backbone(cfg, seed):
    params = {}
    for name, shape, fan_in in _conv_shapes(cfg):
        params[name + ".w"] = init_uniform(seed, name + ".w", shape, fan_in)
        params[name + ".b"] = np.zeros(shape[0])
    params["head.w"] = init_uniform(seed, "head.w", (cfg.classes, cfg.base_channels), cfg.base_channels)
    params["head.b"] = np.zeros(cfg.classes)
    return params


def _block(x, params, name):
    x = ops.relu(ops.conv(x, params[name + ".conv1.w"], params[name + ".conv1.b"]))
    return ops.relu(ops.conv(x, params[name + ".conv2.w"], params[name + ".conv2.b"]))


def backbone_forward(x, params, cfg, tap=None):
    """Run the network on a batch ``x`` of shape (N, C, *S).

    ``tap``, if given, is called with the encoder map at ``cfg.gcn_level`` and must
    return a same-shaped replacement; everything downstream (pooling, skip
    connection, decoder) consumes the replacement.
    """
    missing = [n for n in backbone_param_shapes(cfg) if n not in params]
    if missing:
        raise StateError(f"backbone parameters not initialised: {missing[:3]}...")
    x = ops.as_tensor(x)
    if x.ndim != cfg.ndim + 2 or x.shape[1] != cfg.in_channels:
        raise ShapeError(f"backbone expects (N, {cfg.in_channels}, *{cfg.ndim} spatial), got {x.shape}")
    factor = 2 ** (cfg.levels - 1)
    if any(s % factor for s in x.shape[2:]):
        raise ShapeError(f"spatial dims {x.shape[2:]} must be divisible by {factor}")

    skips = []
    tapped = None
    h = x
    for level in range(1, cfg.levels + 1):
        if level > 1:
            h = ops.maxpool2(h)
        h = _block(h, params, f"enc{level}")
        if level == cfg.gcn_level:
            tapped = h
            if tap is not None:
                h = tap(h)
                if h.shape != tapped.shape:
                    raise ShapeError(f"tap returned {h.shape}, expected {tapped.shape}")
        skips.append(h)
    deep = h
    for level in range(cfg.levels - 1, 0, -1):
        h = ops.concat([ops.upsample2(h), skips[level - 1]], axis=1)
        h = _block(h, params, f"dec{level}")
    logits = ops.channel_matmul(h, params["head.w"], params["head.b"])
    return BackboneOutput(logits, deep, tapped)
