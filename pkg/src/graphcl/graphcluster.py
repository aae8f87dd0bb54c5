"""Clustering head without a fixed cluster count.

Patch nodes of one sample's deep feature map are connected by a signed affinity
``F F^T - max(F F^T) / tau``. One graph convolution over that signed graph feeds a
two-layer perceptron whose row softmax is the soft assignment ``S``. The
correlation-clustering loss ``-Tr(W S S^T)`` rewards putting positively related
nodes together and penalises grouping negatively related ones; the number of
clusters actually used comes out of the argmax of ``S``.
"""
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .netcore import ops
from .netcore.autodiff import Tensor, as_tensor, make_node
from .netcore.params import init_uniform

DEFAULT_C_MAX = 8
_SCALE_FLOOR = 1e-12


@dataclass
class AffinityGraph:
    weights: Tensor  # (n, n) signed, symmetric
    tau: float
    dim: int


@dataclass
class ClusterAssignment:
    assignment: Tensor  # (n, c_max), rows sum to one
    c_max: int


def cc_param_shapes(dim, c_max=DEFAULT_C_MAX):
    return {
        "cc.gnn.w": (dim, dim),
        "cc.mlp1.w": (dim, dim),
        "cc.mlp1.b": (dim,),
        "cc.mlp2.w": (dim, c_max),
        "cc.mlp2.b": (c_max,),
    }


def init_cc(seed, dim, c_max=DEFAULT_C_MAX):
    shapes = cc_param_shapes(dim, c_max)
    out = {}
    for name, shape in shapes.items():
        if name.endswith(".b"):
            out[name] = np.zeros(shape)
        else:
            out[name] = init_uniform(seed, name, shape, shape[0])
    return out


def build_affinity(features, tau):
    features = as_tensor(features)
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    if features.ndim != 2 or features.shape[0] < 2:
        raise ShapeError(f"affinity needs an (n >= 2, d) feature matrix, got {features.shape}")
    g = ops.gram(features)
    w = ops.sub(g, ops.mul(ops.max_all(g), 1.0 / tau))
    return AffinityGraph(w, float(tau), features.shape[1])


def gnn_layer(nodes, affinity, weight):
    """``relu((W / max|W|) N Theta)``; the signed affinity is used as is."""
    w = affinity.weights if isinstance(affinity, AffinityGraph) else as_tensor(affinity)
    nodes = as_tensor(nodes)
    if w.shape[0] != nodes.shape[0]:
        raise ShapeError(f"affinity {w.shape} does not match {nodes.shape[0]} nodes")
    if np.max(np.abs(w.data), initial=0.0) > _SCALE_FLOOR:
        w = ops.div(w, ops.max_abs(w))
    else:
        w = ops.mul(w, 1.0 / _SCALE_FLOOR)
    return ops.relu(ops.matmul(ops.matmul(w, nodes), weight))


def assign_clusters(nodes, params):
    h = ops.relu(ops.dense(nodes, params["cc.mlp1.w"], params["cc.mlp1.b"]))
    logits = ops.dense(h, params["cc.mlp2.w"], params["cc.mlp2.b"])
    return ClusterAssignment(ops.softmax(logits, axis=1), logits.shape[1])


def cc_loss(affinity, assignment, normalize=False):
    """``-sum_ij W_ij <s_i, s_j>``, optionally divided by ``n**2``."""
    w = affinity.weights if isinstance(affinity, AffinityGraph) else as_tensor(affinity)
    s = assignment.assignment if isinstance(assignment, ClusterAssignment) else as_tensor(assignment)
    if w.shape != (s.shape[0], s.shape[0]):
        raise ShapeError(f"cc_loss: affinity {w.shape} vs assignment {s.shape}")
    scale = 1.0 / s.shape[0] ** 2 if normalize else 1.0
    sst = s.data @ s.data.T
    value = -scale * np.sum(w.data * sst)

    def backward(g):
        gw = -scale * g * sst
        gs = -scale * g * ((w.data + w.data.T) @ s.data)
        return gw, gs

    return make_node(value, (w, s), backward)


def extract_clusters(assignment):
    s = assignment.assignment.data if isinstance(assignment, ClusterAssignment) else np.asarray(
        getattr(assignment, "data", assignment)
    )
    ids = np.argmax(s, axis=1)
    return ids, int(np.unique(ids).size)


def node_features(feature_map):
    """(C, *S) map of one sample -> (n, C) node matrix, nodes in row-major spatial order."""
    feature_map = as_tensor(feature_map)
    c = feature_map.shape[0]
    return ops.transpose(ops.reshape(feature_map, (c, -1)))


def l2_rows(x, eps=1e-6):
    """Scale each row to unit length (rows shorter than ``eps`` are left near zero)."""
    norm = ops.power(ops.add(ops.sum(ops.mul(x, x), axis=1, keepdims=True), eps * eps), 0.5)
    return ops.div(x, norm)


def cluster_head(feature_map, params, tau, normalize_loss=False, unit_nodes=True):
    """Affinity, GNN, assignment and loss for one sample's (C, *S) deep map."""
    nodes = node_features(feature_map)
    if unit_nodes:
        nodes = l2_rows(nodes)
    affinity = build_affinity(nodes, tau)
    refined = gnn_layer(nodes, affinity, params["cc.gnn.w"])
    assignment = assign_clusters(refined, params)
    return cc_loss(affinity, assignment, normalize_loss), assignment, affinity


def dump_clusters(path, ids, tau, c_max):
    payload = {
        "node_ids": {str(i): int(c) for i, c in enumerate(ids)},
        "tau": tau,
        "C_max": c_max,
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
