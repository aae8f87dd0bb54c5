"""Two-phase training: supervised pre-training on labeled volumes, then copy-paste
self-training against an EMA teacher with the graph modules switched in."""
import json
import logging
import os
import zlib
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import bcpmix, graphcluster, losses, structalign
from .errors import NumericError, StateError
from .netcore import ops
from .netcore.autodiff import set_default_dtype
from .netcore.backbone import BackboneConfig, backbone_forward, backbone_param_shapes, init_backbone
from .netcore.optim import lr_schedule, make_optimizer
from .netcore.params import ParamStore, save_checkpoint, substream

log = logging.getLogger(__name__)

STREAMS = ("init", "mask", "batch", "phantom")


def backbone_config(model_cfg, train_cfg, classes, spatial_shape):
    mode = "2d" if spatial_shape[0] == 1 else "3d"
    return BackboneConfig(
        levels=model_cfg.levels,
        base_channels=model_cfg.base_channels,
        classes=classes,
        mode=mode,
        gcn_level=train_cfg.gcn_level,
    )


def init_params(bcfg, cfg, seed=None):
    """Student store with backbone, alignment and clustering blocks.

    Every array has its own named init stream, so the values of one block never
    depend on whether or how another block is initialised.
    """
    seed = cfg.seed if seed is None else seed
    arrays = dict(init_backbone(bcfg, seed))
    arrays.update(structalign.init_sa(seed, bcfg.channels(bcfg.gcn_level), cfg.score_dim))
    arrays.update(graphcluster.init_cc(seed, bcfg.channels(bcfg.levels), cfg.c_max))
    return ParamStore(arrays, role="student")


def merge_params(store, loaded):
    """Copy arrays of matching name and shape from ``loaded`` into ``store``."""
    for name, arr in loaded.items():
        if name in store and store[name].shape == arr.shape:
            store[name] = arr
    return store


def to_batch(volumes, bcfg):
    x = np.stack([getattr(v, "data", v) for v in volumes])
    if bcfg.mode == "2d":
        x = x[:, :, 0]
    return x


def labels_batch(labels, bcfg):
    y = np.stack([getattr(lbl, "grid", lbl) for lbl in labels])
    if bcfg.mode == "2d":
        y = y[:, 0]
    return y


def forward(params, x, bcfg, cfg, sa_on):
    tap = None
    if sa_on:
        def tap(h):
            return structalign.align(h, params, cfg.sa_graph_scope)
    return backbone_forward(x, params, bcfg, tap=tap)


def pseudo_label(logits):
    """Binary: class 1 where its probability is >= 0.5; otherwise argmax (lowest index on ties)."""
    z = np.asarray(getattr(logits, "data", logits), dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    if z.shape[1] == 2:
        return (p[:, 1] >= 0.5).astype(np.uint8)
    return np.argmax(p, axis=1).astype(np.uint8)


def ema_update(teacher, student, lam):
    """``teacher <- lam * teacher + (1 - lam) * student`` in place."""
    teacher.check_aligned(student)
    if lam == 1:
        return teacher
    for name, t in teacher.items():
        s = student[name]
        if lam == 0:
            t[...] = s
        else:
            t[...] = lam * t + (1 - lam) * s
    return teacher


def params_hash(store):
    h = 0
    for name, arr in store.items():
        h = zlib.crc32(np.ascontiguousarray(arr).tobytes(), zlib.crc32(name.encode(), h))
    return h


def augment(pairs, rng, bcfg):
    """Random flips on every spatial axis and, for square 2-D slices, a random 90-degree turn.

    ``pairs`` is a list of ``(image (C, D, H, W), label (D, H, W) or None)``.
    """
    out = []
    for img, lbl in pairs:
        axes = (2, 3) if bcfg.mode == "2d" else (1, 2, 3)
        for ax in axes:
            if rng.random() < 0.5:
                img = np.flip(img, axis=ax)
                if lbl is not None:
                    lbl = np.flip(lbl, axis=ax - 1)
        if img.shape[2] == img.shape[3]:
            k = int(rng.integers(0, 4))
            img = np.rot90(img, k, axes=(2, 3))
            if lbl is not None:
                lbl = np.rot90(lbl, k, axes=(1, 2))
        out.append((np.ascontiguousarray(img), None if lbl is None else np.ascontiguousarray(lbl)))
    return out


@dataclass
class TrainState:
    student: ParamStore
    teacher: ParamStore
    optimizer: object
    bcfg: BackboneConfig
    cfg: object
    iteration: int = 0
    rngs: dict = field(default_factory=dict)
    log: List[dict] = field(default_factory=list)
    labeled_ids: List[str] = field(default_factory=list)
    phase: str = "pretrain"
    fixed_masks: Optional[list] = None
    pretrain_log: List[dict] = field(default_factory=list)


def _rngs(seed, phase="pretrain"):
    return {name: substream(seed, f"{phase}/{name}") for name in STREAMS}


def new_state(bcfg, cfg, store=None):
    set_default_dtype(np.dtype(cfg.dtype))
    store = init_params(bcfg, cfg) if store is None else store
    store = store.astype(np.dtype(cfg.dtype))
    return TrainState(
        student=store,
        teacher=store.copy(role="teacher"),
        optimizer=make_optimizer(cfg.optimizer, cfg.momentum),
        bcfg=bcfg,
        cfg=cfg,
        rngs=_rngs(cfg.seed),
    )


def _grads(tensors, names=None):
    return {n: t.grad for n, t in tensors.items() if t.grad is not None and (names is None or n in names)}


def _finite_or_abort(value, where, iteration):
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss in {where} at iteration {iteration}")


def _draw(rng, n, k):
    """``k`` distinct indices out of ``n`` (with replacement only if ``n < k``)."""
    return rng.choice(n, size=k, replace=n < k)


def backbone_names(bcfg):
    return set(backbone_param_shapes(bcfg))


def pretrain_step(state, split):
    cfg, bcfg = state.cfg, state.bcfg
    rng = state.rngs["batch"]
    half = cfg.batch_size // 2
    idx = _draw(rng, len(split.labeled), half)
    pairs = [(split.labeled[i][0].data, split.labeled[i][1].grid) for i in idx]
    if cfg.augment:
        pairs = augment(pairs, rng, bcfg)
    x = to_batch([p[0] for p in pairs], bcfg)
    y = labels_batch([p[1] for p in pairs], bcfg)
    names = backbone_names(bcfg)
    tensors = state.student.tensors(names=names)
    out = forward(tensors, x, bcfg, cfg, sa_on=False)
    loss = losses.seg_loss_weighted(out.logits, y, None, cfg.seg_loss_mix, cfg.dice_eps)
    value = loss.item()
    _finite_or_abort(value, "pretrain", state.iteration)
    loss.backward()
    lr = lr_schedule(state.iteration, cfg.base_lr, cfg.lr_decay, cfg.lr_period)
    state.optimizer.step(state.student, _grads(tensors), lr)
    entry = {"iter": state.iteration, "l_seg": value, "lr": lr}
    state.iteration += 1
    state.student.iteration = state.iteration
    return entry


def pretrain(split, cfg, bcfg, log_path=None, store=None):
    """Supervised training on the labeled pairs; the teacher becomes a copy of the result."""
    state = new_state(bcfg, cfg, store)
    state.labeled_ids = split.labeled_ids
    writer = _LogWriter(log_path)
    try:
        for _ in range(cfg.iters_pretrain):
            entry = pretrain_step(state, split)
            state.log.append(entry)
            writer.write(entry)
    finally:
        writer.close()
    return start_selftrain(state)


def start_selftrain(state):
    """Teacher := student, fresh optimizer and self-training random streams.

    Self-training never reads pre-training generator state, so resuming from a
    pre-training checkpoint reproduces an uninterrupted run exactly.
    """
    state.teacher = state.student.copy(role="teacher")
    state.phase = "selftrain"
    state.iteration = 0
    state.student.iteration = state.teacher.iteration = 0
    state.optimizer = make_optimizer(state.cfg.optimizer, state.cfg.momentum)
    state.rngs = _rngs(state.cfg.seed, "selftrain")
    state.fixed_masks = None
    if state.log:
        state.pretrain_log = state.log
    state.log = []
    return state


def selftrain_state(bcfg, cfg, store, labeled_ids=()):
    """State ready for :func:`run_selftrain` from a pre-trained parameter store."""
    state = new_state(bcfg, cfg, store)
    state.labeled_ids = list(labeled_ids)
    return start_selftrain(state)


def draw_selftrain_batch(state, split):
    """``batch_size / 2`` labeled and as many unlabeled volumes, augmented."""
    cfg = state.cfg
    rng = state.rngs["batch"]
    half = cfg.batch_size // 2
    li = _draw(rng, len(split.labeled), half)
    ui = _draw(rng, len(split.unlabeled), half)
    labeled = [(split.labeled[i][0].data, split.labeled[i][1].grid) for i in li]
    unlabeled = [(split.unlabeled[i].data, None) for i in ui]
    if cfg.augment:
        labeled = augment(labeled, rng, state.bcfg)
        unlabeled = augment(unlabeled, rng, state.bcfg)
    return labeled, [u[0] for u in unlabeled]


def _mask_for(state, dims):
    cfg = state.cfg
    if cfg.mask_resample == "once":
        if state.fixed_masks is None:
            state.fixed_masks = bcpmix.gen_mask(dims, cfg.zero_ratio, state.rngs["mask"])
        return state.fixed_masks
    return bcpmix.gen_mask(dims, cfg.zero_ratio, state.rngs["mask"])


def selftrain_step(state, batch):
    """One self-training iteration; returns the :class:`LossReport`."""
    cfg, bcfg = state.cfg, state.bcfg
    labeled, unlabeled = batch
    npairs = len(labeled) // 2

    # (1) teacher pseudo-labels for the unlabeled half
    teacher_params = state.teacher.tensors(requires_grad=False)
    xu = to_batch(unlabeled, bcfg)
    t_out = forward(teacher_params, xu, bcfg, cfg, sa_on=cfg.sa_enabled)
    pseudo = pseudo_label(t_out.logits)

    # (2)-(3) masks and mixed samples; pair p uses labeled (2p, 2p+1), unlabeled (2p, 2p+1)
    xl = to_batch([l[0] for l in labeled], bcfg)
    yl = labels_batch([l[1] for l in labeled], bcfg)
    x_in, x_out, y_in, y_out, masks = [], [], [], [], []
    for p in range(npairs):
        j, k = 2 * p, 2 * p + 1
        m, n = 2 * p, 2 * p + 1
        mask = _mask_for(state, xl.shape[2:])
        masks.append(mask.grid)
        x_in.append(bcpmix.mix_pair(xl[j], xu[m], mask, "in"))
        y_in.append(bcpmix.mix_labels(yl[j], pseudo[m], mask, "in"))
        x_out.append(bcpmix.mix_pair(xl[k], xu[n], mask, "out"))
        y_out.append(bcpmix.mix_labels(yl[k], pseudo[n], mask, "out"))
    x = np.stack(x_in + x_out)
    masks = np.stack(masks)

    # (4) student forward on [X_in..., X_out...]
    names = None if (cfg.sa_enabled and cfg.cc_enabled) else _active_names(state)
    params = state.student.tensors(names=names)
    out = forward(params, x, bcfg, cfg, sa_on=cfg.sa_enabled)
    q_in = ops.rows(out.logits, 0, npairs)
    q_out = ops.rows(out.logits, npairs, 2 * npairs)
    kw = {"mix": cfg.seg_loss_mix, "eps": cfg.dice_eps}
    l_in = losses.loss_in(q_in, np.stack(y_in), masks, cfg.alpha, **kw)
    l_out = losses.loss_out(q_out, np.stack(y_out), masks, cfg.alpha, **kw)
    total = ops.add(l_in, l_out)

    # (5) clustering loss, mean over samples of both streams
    l_cc_value = None
    if cfg.cc_enabled:
        terms = []
        for b in range(2 * npairs):
            sample = ops.reshape(ops.rows(out.deep, b, b + 1), out.deep.shape[1:])
            loss_b, _, _ = graphcluster.cluster_head(
                sample, params, cfg.tau, cfg.cc_normalize, cfg.cc_unit_nodes
            )
            terms.append(loss_b)
        l_cc = ops.mul(_stack_sum(terms), 1.0 / len(terms))
        l_cc_value = l_cc.item()
        if cfg.kappa != 0:
            total = ops.add(total, ops.mul(l_cc, cfg.kappa))

    # (6) report
    report = losses.total_loss(l_in.item(), l_out.item(), l_cc_value, cfg.kappa, cfg.alpha)
    _finite_or_abort(report.l_all, "selftrain", state.iteration)

    # (7) student update; the teacher must not move until the EMA step
    before = params_hash(state.teacher)
    total.backward()
    lr = lr_schedule(state.iteration, cfg.base_lr, cfg.lr_decay, cfg.lr_period)
    state.optimizer.step(state.student, _grads(params), lr)
    if params_hash(state.teacher) != before:
        raise StateError("teacher parameters changed outside the EMA update")

    # (8) teacher
    ema_update(state.teacher, state.student, cfg.lambda_ema)
    state.iteration += 1
    state.student.iteration = state.teacher.iteration = state.iteration
    return report, lr


def _active_names(state):
    names = backbone_names(state.bcfg)
    if state.cfg.sa_enabled:
        names |= {n for n in state.student.names() if n.startswith("sa.")}
    if state.cfg.cc_enabled:
        names |= {n for n in state.student.names() if n.startswith("cc.")}
    return names


def _stack_sum(terms):
    acc = terms[0]
    for t in terms[1:]:
        acc = ops.add(acc, t)
    return acc


class _LogWriter:
    def __init__(self, path):
        self.fh = None
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            self.fh = open(path, "w")

    def write(self, entry):
        if self.fh:
            self.fh.write(json.dumps(entry) + "\n")

    def close(self):
        if self.fh:
            self.fh.close()
            self.fh = None


def log_entry(iteration, report, lr):
    entry = {"iter": iteration}
    entry.update(report.to_log())
    entry["lr"] = lr
    return entry


def run_selftrain(state, split, log_path=None, ckpt_prefix=None, ckpt_extra=None):
    """Iterate :func:`selftrain_step`; one JSON log line per iteration."""
    if state.phase != "selftrain":
        raise StateError("run_selftrain needs a pretrained state")
    cfg = state.cfg
    writer = _LogWriter(log_path)
    try:
        for _ in range(cfg.iters_selftrain):
            it = state.iteration
            batch = draw_selftrain_batch(state, split)
            report, lr = selftrain_step(state, batch)
            entry = log_entry(it, report, lr)
            state.log.append(entry)
            writer.write(entry)
            if ckpt_prefix and cfg.ckpt_interval and state.iteration % cfg.ckpt_interval == 0:
                write_state(state, ckpt_prefix, ckpt_extra)
    finally:
        writer.close()
    if ckpt_prefix:
        write_state(state, ckpt_prefix, ckpt_extra)
    return state


def write_state(state, directory, extra=None):
    meta = {"model": state.bcfg.to_dict(), "train_ids": list(state.labeled_ids)}
    if extra:
        meta.update(extra)
    save_checkpoint(state.student, os.path.join(directory, "student"), meta)
    save_checkpoint(state.teacher, os.path.join(directory, "teacher"), meta)


def predict(store, volumes, bcfg, cfg, sa_on, batch=2):
    """Argmax label grids (D, H, W) for ``volumes``.

    With alignment on, inference runs in groups of ``batch`` volumes, in the given
    order; a short final group borrows earlier volumes as padding.
    """
    set_default_dtype(np.dtype(cfg.dtype))
    params = store.tensors(requires_grad=False)
    preds = []
    n = len(volumes)
    step = max(batch, 2) if sa_on else max(batch, 1)
    for start in range(0, n, step):
        group = list(range(start, min(start + step, n)))
        pad = [i for i in range(n) if i not in group][: step - len(group)] if sa_on else []
        x = to_batch([volumes[i] for i in group + pad], bcfg)
        out = forward(params, x, bcfg, cfg, sa_on)
        z = out.logits.data[: len(group)]
        lab = np.argmax(z, axis=1).astype(np.uint8)
        if bcfg.mode == "2d":
            lab = lab[:, None]
        preds.extend(lab)
    return preds
