"""Registered subgraphs for the finite-difference suite.

Every builder gets a seeded generator and returns ``(fn, arrays)``; ``fn`` maps a
dict of tensors to a scalar. Tensor-valued ops are reduced to a scalar by a fixed
random projection, so every output entry contributes to the checked gradient.
Inputs that feed a kink (relu, max) are kept away from it.
"""
import numpy as np

from . import graphcluster, losses, structalign
from .netcore import ops
from .netcore.backbone import BackboneConfig, backbone_forward, init_backbone
from .netcore.gradcheck import SUBGRAPHS, grad_check, register

SEEDS = (0, 1, 2, 3, 4)


def _project(out, rng):
    r = rng.standard_normal(out.shape)
    return ops.sum(ops.mul(out, r))


def _away_from_zero(rng, shape, gap=0.1):
    x = rng.uniform(gap, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _distinct(rng, shape):
    """Entries whose pairwise gaps are far above the finite-difference step."""
    n = int(np.prod(shape))
    return (rng.permutation(n).astype(np.float64) / n + 0.01 * rng.standard_normal(n)).reshape(shape)


def _unary(name, op, sample):
    @register(f"ops.{name}", "netcore")
    def build(rng):
        x = sample(rng)
        r = rng.standard_normal(op(ops.Tensor(x)).shape)
        return (lambda t: ops.sum(ops.mul(op(t["x"]), r))), {"x": x}
    return build


def _binary(name, op, sa, sb):
    @register(f"ops.{name}", "netcore")
    def build(rng):
        a, b = sa(rng), sb(rng)
        r = rng.standard_normal(op(ops.Tensor(a), ops.Tensor(b)).shape)
        return (lambda t: ops.sum(ops.mul(op(t["a"], t["b"]), r))), {"a": a, "b": b}
    return build


def _normal(*shape):
    return lambda rng: rng.standard_normal(shape)


def _positive(*shape):
    return lambda rng: rng.uniform(0.5, 2.0, size=shape)


_binary("add", ops.add, _normal(3, 4), _normal(1, 4))
_binary("sub", ops.sub, _normal(3, 4), _normal(3, 1))
_binary("mul", ops.mul, _normal(2, 3, 4), _normal(3, 4))
_binary("div", ops.div, _normal(3, 4), _positive(3, 4))
_binary("matmul", ops.matmul, _normal(3, 5), _normal(5, 2))
_binary("matmul_batched", ops.matmul, _normal(2, 3, 4), _normal(2, 4, 2))
_unary("power", lambda x: ops.power(x, 1.5), _positive(3, 4))
_unary("power_neg_half", lambda x: ops.power(x, -0.5), _positive(5))
_unary("exp", ops.exp, _normal(3, 4))
_unary("log", ops.log, _positive(3, 4))
_unary("relu", ops.relu, lambda rng: _away_from_zero(rng, (4, 5)))
_unary("transpose", lambda x: ops.transpose(x, (2, 0, 1)), _normal(2, 3, 4))
_unary("reshape", lambda x: ops.reshape(x, (4, 6)), _normal(2, 3, 4))
_unary("sum_axis", lambda x: ops.sum(x, axis=1, keepdims=True), _normal(3, 4, 2))
_unary("mean_axis", lambda x: ops.mean(x, axis=(0, 2)), _normal(3, 4, 2))
_unary("softmax_channels", lambda x: ops.softmax(x, axis=1), _normal(2, 3, 4, 4))
_unary("softmax_rows", lambda x: ops.softmax(x, axis=-1), _normal(5, 4))
_unary("max_all", ops.max_all, lambda rng: _distinct(rng, (4, 5)))
_unary("max_abs", ops.max_abs, lambda rng: _distinct(rng, (4, 5)) - 0.6)
_unary("maxpool2_2d", ops.maxpool2, lambda rng: _distinct(rng, (2, 3, 6, 4)))
_unary("maxpool2_3d", ops.maxpool2, lambda rng: _distinct(rng, (1, 2, 4, 4, 2)))
_unary("upsample2_2d", ops.upsample2, _normal(2, 3, 3, 2))
_unary("upsample2_3d", ops.upsample2, _normal(1, 2, 2, 2, 3))
_unary("gap", ops.gap, _normal(3, 4, 5, 2))
_unary("rows", lambda x: ops.rows(x, 1, 3), _normal(4, 3, 2))
_unary("gram", ops.gram, _normal(5, 3))


@register("ops.concat", "netcore")
def _concat(rng):
    a, b = rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 2, 4, 4))
    r = rng.standard_normal((2, 5, 4, 4))
    return (lambda t: ops.sum(ops.mul(ops.concat([t["a"], t["b"]], axis=1), r))), {"a": a, "b": b}


def _conv_case(spatial):
    def build(rng):
        nd = len(spatial)
        x = rng.standard_normal((2, 2) + spatial)
        w = rng.standard_normal((3, 2) + (3,) * nd) * 0.3
        b = rng.standard_normal(3)
        r = rng.standard_normal((2, 3) + spatial)
        return (lambda t: ops.sum(ops.mul(ops.conv(t["x"], t["w"], t["b"]), r))), {"x": x, "w": w, "b": b}
    return build


register("ops.conv2d", "netcore")(_conv_case((5, 4)))
register("ops.conv3d", "netcore")(_conv_case((3, 4, 3)))


@register("ops.channel_matmul", "netcore")
def _channel_matmul(rng):
    x = rng.standard_normal((2, 3, 4, 3))
    w = rng.standard_normal((2, 3))
    b = rng.standard_normal(2)
    r = rng.standard_normal((2, 2, 4, 3))
    return (lambda t: ops.sum(ops.mul(ops.channel_matmul(t["x"], t["w"], t["b"]), r))), {"x": x, "w": w, "b": b}


@register("ops.dense", "netcore")
def _dense(rng):
    x = rng.standard_normal((4, 5))
    w = rng.standard_normal((5, 3))
    b = rng.standard_normal(3)
    r = rng.standard_normal((4, 3))
    return (lambda t: ops.sum(ops.mul(ops.dense(t["x"], t["w"], t["b"]), r))), {"x": x, "w": w, "b": b}


@register("backbone.mid_conv", "netcore")
def _backbone(rng):
    """Mean logit of a 3-level network w.r.t. the first level-2 conv weight."""
    cfg = BackboneConfig(levels=3, base_channels=2, classes=2)
    params = init_backbone(cfg, int(rng.integers(1 << 30)))
    for name in params:
        if name.endswith(".b"):
            params[name] = rng.uniform(0.05, 0.2, size=params[name].shape)
    x = rng.standard_normal((2, 1, 8, 8))
    target = "enc2.conv1.w"
    fixed = {n: ops.Tensor(v) for n, v in params.items() if n != target}

    def fn(t):
        out = backbone_forward(x, dict(fixed, **{target: t[target]}), cfg)
        return ops.mean(out.logits)

    return fn, {target: params[target]}


def _sa_arrays(rng, channels, score_dim):
    shapes = structalign.sa_param_shapes(channels, score_dim)
    return {name: rng.standard_normal(shape) * 0.5 for name, shape in shapes.items()}


def _sa_case(scope):
    def build(rng):
        """Deep map plus every alignment parameter, merge projection non-zero."""
        arrays = _sa_arrays(rng, 3, 4)
        arrays["fmap"] = rng.standard_normal((4, 3, 3, 2))
        r = rng.standard_normal((4, 3, 3, 2))

        def fn(t):
            return ops.sum(ops.mul(structalign.align(t["fmap"], t, scope), r))

        return fn, arrays
    return build


register("structalign.path", "structalign")(_sa_case("batch"))
register("structalign.path_stream", "structalign")(_sa_case("stream"))


def _cc_case(unit_nodes, normalize):
    def build(rng):
        """Per-sample deep map through affinity, GNN, MLP and the trace loss."""
        c, c_max = 3, 3
        shapes = graphcluster.cc_param_shapes(c, c_max)
        arrays = {name: rng.standard_normal(shape) * 0.7 for name, shape in shapes.items()}
        # biases away from zero keep the relus off their kinks
        arrays["cc.mlp1.b"] = rng.uniform(0.3, 0.6, size=shapes["cc.mlp1.b"])
        arrays["fmap"] = _distinct(rng, (c, 3, 2)) + 0.2

        def fn(t):
            loss, _, _ = graphcluster.cluster_head(t["fmap"], t, tau=2.0, normalize_loss=normalize,
                                                   unit_nodes=unit_nodes)
            return loss

        return fn, arrays
    return build


register("graphcluster.path", "graphcluster")(_cc_case(True, False))
register("graphcluster.path_raw_nodes", "graphcluster")(_cc_case(False, False))
register("graphcluster.path_normalized", "graphcluster")(_cc_case(True, True))


@register("graphcluster.cc_loss", "graphcluster")
def _cc_loss(rng):
    n, k = 5, 3
    a = rng.standard_normal((n, n))
    s = rng.standard_normal((n, k))
    return (lambda t: graphcluster.cc_loss(t["w"], ops.softmax(t["s"], axis=1))), {"w": a + a.T, "s": s}


def _seg_case(kind, classes):
    def build(rng):
        shape = (2, classes, 5, 4)
        logits = rng.standard_normal(shape)
        target = rng.integers(0, classes, size=(2, 5, 4))
        mask = (rng.random((2, 5, 4)) < 0.5).astype(np.uint8)
        if kind == "plain":
            return (lambda t: losses.seg_loss_weighted(t["z"], target)), {"z": logits}
        if kind == "weighted":
            w = rng.uniform(0.1, 1.0, size=target.shape)
            return (lambda t: losses.seg_loss_weighted(t["z"], target, w)), {"z": logits}
        fn = losses.loss_in if kind == "in" else losses.loss_out
        return (lambda t: fn(t["z"], target, mask, 0.5)), {"z": logits}
    return build


for _kind in ("plain", "weighted", "in", "out"):
    register(f"losses.seg_{_kind}", "losses")(_seg_case(_kind, 2))
register("losses.seg_weighted_3class", "losses")(_seg_case("weighted", 3))


def names(module=None):
    return sorted(n for n, s in SUBGRAPHS.items() if module is None or s.module == module)


def run_suite(module=None, seeds=SEEDS, tolerance=1e-4, eps=1e-5):
    """All registered checks (optionally those of one module), one report per seed."""
    return [grad_check(name, seed, tolerance, eps) for name in names(module) for seed in seeds]
