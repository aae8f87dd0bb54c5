"""Voxel-weighted segmentation loss, region-weighted mixed-image losses and the total."""
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateWeightsError, NumericError, ShapeError
from .netcore.autodiff import as_tensor, make_node

DICE_EPS = 1e-5
SEG_LOSS_MIX = 0.5  # weight of cross-entropy; Dice gets the rest


def _softmax(z, axis=1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True), z - np.log(e.sum(axis=axis, keepdims=True))


def one_hot(target, k):
    target = np.asarray(target)
    out = np.zeros((target.shape[0], k) + target.shape[1:], dtype=bool)
    for c in range(k):
        out[:, c] = target == c
    return out


def ce_map(logits, target):
    """Per-voxel cross-entropy, shape (N, *S)."""
    logits = np.asarray(getattr(logits, "data", logits))
    _, logp = _softmax(logits)
    return -np.take_along_axis(logp, np.asarray(target)[:, None].astype(np.intp), axis=1)[:, 0]


def seg_loss_weighted(logits, target, weights=None, mix=SEG_LOSS_MIX, eps=DICE_EPS):
    """``mix * weighted CE + (1 - mix) * weighted soft Dice`` over a batch.

    logits: (N, k, *S); target: integer (N, *S); weights: (N, *S), non-negative.
    Weighted CE is ``sum w ce / sum w``. Soft Dice per class is
    ``1 - (2 sum w p g + eps) / (sum w (p + g) + eps)``, averaged over the k classes.
    """
    logits = as_tensor(logits)
    z = logits.data
    target = np.asarray(target)
    if target.shape != (z.shape[0],) + z.shape[2:]:
        raise ShapeError(f"target {target.shape} does not match logits {z.shape}")
    w = np.ones(target.shape, dtype=z.dtype) if weights is None else np.asarray(weights, dtype=z.dtype)
    if w.shape != target.shape:
        raise ShapeError(f"weights {w.shape} do not match target {target.shape}")
    if np.any(w < 0):
        raise DegenerateWeightsError("voxel weights must be non-negative")
    wsum = w.sum()
    if wsum <= 0:
        raise DegenerateWeightsError("voxel weights are all zero")
    k = z.shape[1]
    p, logp = _softmax(z)
    g = one_hot(target, k).astype(z.dtype)
    wc = w[:, None]

    ce = -(logp * g).sum(axis=1)
    ce_val = (w * ce).sum() / wsum

    red = (0,) + tuple(range(2, z.ndim))
    inter = (wc * p * g).sum(axis=red)
    union = (wc * (p + g)).sum(axis=red)
    dice_c = 1.0 - (2 * inter + eps) / (union + eps)
    dice_val = dice_c.mean()

    value = mix * ce_val + (1 - mix) * dice_val

    def backward(up):
        # d/dp of the Dice term, then through the softmax Jacobian
        shape = (1, k) + (1,) * (z.ndim - 2)
        u = (union + eps).reshape(shape)
        num = (2 * inter + eps).reshape(shape)
        dp = -(wc * (2 * g * u - num)) / (u * u) / k
        dz_dice = p * (dp - (dp * p).sum(axis=1, keepdims=True))
        dz_ce = wc * (p - g) / wsum
        return (up * (mix * dz_ce + (1 - mix) * dz_dice),)

    return make_node(value, (logits,), backward)


def region_weights(mask, alpha, labeled_is_one=True):
    """``M + alpha (1 - M)`` (in-stream) or ``(1 - M) + alpha M`` (out-stream)."""
    m = np.asarray(mask, dtype=np.float64)
    if labeled_is_one:
        return m + alpha * (1 - m)
    return (1 - m) + alpha * m


def _batch_weights(mask, alpha, labeled_is_one, target_shape):
    w = region_weights(mask, alpha, labeled_is_one)
    return np.broadcast_to(w, target_shape)


def loss_in(logits, y_in, mask, alpha, **kw):
    """Full weight where the labeled image shows through (M = 1), ``alpha`` elsewhere."""
    y_in = np.asarray(y_in)
    return seg_loss_weighted(logits, y_in, _batch_weights(mask, alpha, True, y_in.shape), **kw)


def loss_out(logits, y_out, mask, alpha, **kw):
    """Mirror of :func:`loss_in`: the labeled image shows through where M = 0."""
    y_out = np.asarray(y_out)
    return seg_loss_weighted(logits, y_out, _batch_weights(mask, alpha, False, y_out.shape), **kw)


@dataclass
class LossReport:
    l_in: float
    l_out: float
    l_cc: Optional[float]
    l_all: float
    alpha: float
    kappa: float
    weight_in: float = float("nan")
    weight_out: float = float("nan")

    def to_log(self):
        out = {"l_in": self.l_in, "l_out": self.l_out, "l_all": self.l_all}
        if self.l_cc is not None:
            out["l_cc"] = self.l_cc
        return out

    def to_dict(self):
        return asdict(self)


def total_loss(l_in, l_out, l_cc=None, kappa=0.01, alpha=0.5):
    """``l_in + l_out + kappa * l_cc``; ``l_cc=None`` means the clustering term is off."""
    vals = [l_in, l_out] + ([] if l_cc is None else [l_cc])
    if not all(math.isfinite(float(v)) for v in vals):
        raise NumericError(f"non-finite loss term(s): {vals}")
    l_all = float(l_in) + float(l_out)
    if l_cc is not None:
        l_all += kappa * float(l_cc)
    return LossReport(float(l_in), float(l_out), None if l_cc is None else float(l_cc), l_all, alpha, kappa)
