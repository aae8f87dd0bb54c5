"""Structure-aware alignment across the samples of a mini-batch.

Each sample becomes a node. A small analyser head turns its deep feature map
into a probability vector of structure scores; the Gram matrix of those vectors
is the instance graph, over which one symmetric-normalised graph convolution
propagates pooled sample features. The result is projected back to the feature
width and added to every spatial position of the sample's map.
"""
from dataclasses import dataclass

import numpy as np

from .errors import BatchTooSmallError, ShapeError, SingularGraphError
from .netcore import ops
from .netcore.autodiff import Tensor, as_tensor
from .netcore.params import init_uniform

DEFAULT_SCORE_DIM = 16


@dataclass
class StructureScores:
    matrix: Tensor  # (w, h), rows on the probability simplex


@dataclass
class InstanceGraph:
    adjacency: Tensor  # (w, w) Gram matrix of the score rows
    degrees: Tensor    # (w,)


def sa_param_shapes(channels, score_dim=DEFAULT_SCORE_DIM, out_dim=None):
    out_dim = channels if out_dim is None else out_dim
    return {
        "sa.dsa.w": (channels, score_dim),
        "sa.dsa.b": (score_dim,),
        "sa.gcn.w": (channels, out_dim),
        "sa.merge.w": (out_dim, channels),
        "sa.merge.b": (channels,),
    }


def init_sa(seed, channels, score_dim=DEFAULT_SCORE_DIM, out_dim=None):
    """Analyser and GCN weights are fan-in uniform; the merge projection starts at zero,
    so switching the module on leaves a pretrained backbone's output unchanged."""
    shapes = sa_param_shapes(channels, score_dim, out_dim)
    return {
        "sa.dsa.w": init_uniform(seed, "sa.dsa.w", shapes["sa.dsa.w"], channels),
        "sa.dsa.b": np.zeros(shapes["sa.dsa.b"]),
        "sa.gcn.w": init_uniform(seed, "sa.gcn.w", shapes["sa.gcn.w"], channels),
        "sa.merge.w": np.zeros(shapes["sa.merge.w"]),
        "sa.merge.b": np.zeros(shapes["sa.merge.b"]),
    }


def dsa_scores(deep_features, params):
    """GAP -> dense -> row softmax, one score vector per sample."""
    deep_features = as_tensor(deep_features)
    if deep_features.shape[0] < 2:
        raise BatchTooSmallError(
            f"instance graph needs at least 2 samples, got batch of {deep_features.shape[0]}"
        )
    pooled = ops.gap(deep_features)
    logits = ops.dense(pooled, params["sa.dsa.w"], params["sa.dsa.b"])
    return StructureScores(ops.softmax(logits, axis=1))


def build_instance_graph(scores):
    x = scores.matrix if isinstance(scores, StructureScores) else as_tensor(scores)
    adjacency = ops.gram(x)
    return InstanceGraph(adjacency, ops.sum(adjacency, axis=1))


def normalized_adjacency(graph):
    d = graph.degrees
    if np.any(d.data <= 0):
        raise SingularGraphError(f"instance graph has non-positive degree(s): {d.data}")
    inv_sqrt = ops.power(d, -0.5)
    return ops.mul(ops.mul(ops.reshape(inv_sqrt, (-1, 1)), graph.adjacency), ops.reshape(inv_sqrt, (1, -1)))


def gcn_propagate(graph, signal, weight):
    """``D^-1/2 A D^-1/2 X W``."""
    signal, weight = as_tensor(signal), as_tensor(weight)
    if signal.shape[0] != graph.adjacency.shape[0]:
        raise ShapeError(f"signal {signal.shape} does not match graph of {graph.adjacency.shape[0]} nodes")
    return ops.matmul(ops.matmul(normalized_adjacency(graph), signal), weight)


def merge_features(cnn_map, z, params):
    """Project each sample's GCN row to the map width and add it at every position."""
    cnn_map, z = as_tensor(cnn_map), as_tensor(z)
    proj = ops.dense(z, params["sa.merge.w"], params["sa.merge.b"])
    if proj.shape != cnn_map.shape[:2]:
        raise ShapeError(f"merge: projected rows {proj.shape} do not match map {cnn_map.shape}")
    nsp = cnn_map.ndim - 2
    return ops.add(cnn_map, ops.reshape(proj, proj.shape + (1,) * nsp))


def align(feature_map, params, scope="batch"):
    """Full alignment step; usable directly as the backbone tap."""
    if scope == "batch":
        return _align_group(feature_map, params)
    if scope == "stream":
        n = feature_map.shape[0]
        if n % 2:
            raise BatchTooSmallError(f"stream scope needs an even batch, got {n}")
        half = n // 2
        first = ops.rows(feature_map, 0, half)
        second = ops.rows(feature_map, half, n)
        return ops.concat([_align_group(first, params), _align_group(second, params)], axis=0)
    raise ValueError(f"unknown sa_graph_scope {scope!r}")


def _align_group(feature_map, params):
    scores = dsa_scores(feature_map, params)
    graph = build_instance_graph(scores)
    z = gcn_propagate(graph, ops.gap(feature_map), params["sa.gcn.w"])
    return merge_features(feature_map, z, params)
