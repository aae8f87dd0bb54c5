"""graphcl command line: gen-data, pretrain, selftrain, eval, ablate, gradcheck.

Exit codes: 0 ok, 2 configuration error, 3 numeric error, 4 I/O error.
``GRAPHCL_THREADS`` caps BLAS threads (default 1, which is also what makes reruns
byte-identical).
"""
import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import gradsuite, segmetrics, trainer, voldata
from .config import RunConfig, TrainConfig
from .errors import ConfigError, DataIOError, GraphCLError
from .netcore.backbone import BackboneConfig
from .netcore.params import load_checkpoint

log = logging.getLogger("graphcl")

ABLATION_HEADER = ["row", "sa_enabled", "cc_enabled", "gcn_level", "seed", "dice", "jaccard",
                   "hd95", "asd", "l_all_final", "log"]
TOGGLE_ROWS = (("baseline", False, False), ("+SA", True, False), ("+CC", False, True), ("+SA+CC", True, True))


# data


def phantom_dataset(spec, holdout):
    """``spec.n_volumes`` split-eligible phantoms followed by ``holdout`` held-out ones."""
    full = dataclasses.replace(spec, n_volumes=spec.n_volumes + holdout)
    pairs = voldata.generate_phantoms(full)
    return pairs[: spec.n_volumes], pairs[spec.n_volumes:]


def load_data(run):
    """(train pairs, held-out pairs) from ``run.data_dir`` or, if unset, in-memory phantoms."""
    if run.data_dir:
        return voldata.read_dataset(run.data_dir, eligible=True), voldata.read_dataset(run.data_dir, eligible=False)
    return phantom_dataset(run.phantom, run.holdout)


def _spec_from_file(path):
    """A bare phantom spec (plus optional ``holdout``) or a full run config."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read spec {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"spec {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"spec {path}: expected a JSON object")
    if "phantom" in raw:
        run = RunConfig.from_dict(raw)
        return run.phantom, run.holdout
    raw = dict(raw)
    holdout = raw.pop("holdout", 0)
    if not isinstance(holdout, int) or holdout < 0:
        raise ConfigError(f"holdout: must be a non-negative integer, got {holdout!r}")
    fields = {f.name for f in dataclasses.fields(voldata.PhantomSpec)}
    unknown = sorted(set(raw) - fields)
    if unknown:
        raise ConfigError(f"spec: unknown field(s) {unknown}")
    try:
        return voldata.PhantomSpec(**raw), holdout
    except TypeError as exc:
        raise ConfigError(f"spec: {exc}") from exc


# runs


def _model_config(run, train_cfg, pairs):
    vol, lbl = pairs[0]
    return trainer.backbone_config(run.model, train_cfg, lbl.classes, vol.spatial_shape)


def _apply_toggles(run, args):
    if getattr(args, "no_sa", False):
        run.train.sa_enabled = False
    if getattr(args, "no_cc", False):
        run.train.cc_enabled = False
    if getattr(args, "out_dir", None):
        run.out_dir = args.out_dir
    return run


def _meta(state, run):
    return {"train": dataclasses.asdict(state.cfg), "phantom_seed": run.phantom.seed}


def _write_config(run, directory):
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "config.json"), "w") as fh:
        fh.write(run.dumps())


def run_pretrain(run):
    train_pairs, _ = load_data(run)
    cfg = run.train
    split = voldata.split_dataset(train_pairs, cfg.labeled_ratio, cfg.seed)
    bcfg = _model_config(run, cfg, train_pairs)
    out = os.path.join(run.out_dir, "pretrain")
    _write_config(run, out)
    state = trainer.pretrain(split, cfg, bcfg, os.path.join(out, "train.log.jsonl"))
    state.log = state.pretrain_log
    trainer.write_state(state, out, _meta(state, run))
    log.info("pretrain: %d iterations, final l_seg %.4f", cfg.iters_pretrain,
             state.pretrain_log[-1]["l_seg"] if state.pretrain_log else float("nan"))
    return state


def _resolve_ckpt(path, net="student"):
    if os.path.isdir(path):
        return os.path.join(path, f"{net}.ckpt.json")
    return path


def _initial_store(bcfg, cfg, init_path):
    loaded, meta = load_checkpoint(init_path)
    model = meta.get("model")
    if model is not None:
        saved = BackboneConfig(**model)
        if (saved.levels, saved.base_channels, saved.classes, saved.mode) != (
                bcfg.levels, bcfg.base_channels, bcfg.classes, bcfg.mode):
            raise ConfigError(f"--init checkpoint model {model} does not match the configured model")
    return trainer.merge_params(trainer.init_params(bcfg, cfg), loaded)


def run_selftrain(run, init=None):
    cfg = run.train
    init = init or os.path.join(run.out_dir, "pretrain", "student.ckpt.json")
    if not os.path.exists(_resolve_ckpt(init)):
        raise ConfigError(f"no pre-trained initialisation: {init} not found; run pretrain or pass --init")
    train_pairs, _ = load_data(run)
    split = voldata.split_dataset(train_pairs, cfg.labeled_ratio, cfg.seed)
    bcfg = _model_config(run, cfg, train_pairs)
    store = _initial_store(bcfg, cfg, _resolve_ckpt(init))
    state = trainer.selftrain_state(bcfg, cfg, store, split.labeled_ids)
    out = os.path.join(run.out_dir, "selftrain")
    _write_config(run, out)
    trainer.run_selftrain(state, split, os.path.join(out, "train.log.jsonl"), out, _meta(state, run))
    return state


def evaluate_store(store, bcfg, cfg, pairs):
    preds = trainer.predict(store, [v for v, _ in pairs], bcfg, cfg, cfg.sa_enabled)
    records = []
    for pred, (vol, lbl) in zip(preds, pairs):
        records.extend(segmetrics.evaluate_volume(pred, lbl.grid, lbl.classes, vol.spacing, vol.id))
    return records


def run_eval(ckpt, data, out, net="teacher", allow_train_eval=False):
    path = _resolve_ckpt(ckpt, net)
    store, meta = load_checkpoint(path)
    if "model" not in meta or "train" not in meta:
        raise DataIOError(f"{path}: checkpoint lacks model/train metadata")
    bcfg = BackboneConfig(**meta["model"])
    cfg = TrainConfig(**meta["train"])
    manifest = voldata.read_manifest(data)
    if manifest.classes != bcfg.classes:
        raise DataIOError(f"checkpoint predicts {bcfg.classes} classes but {data} has {manifest.classes}")
    eligible = False if manifest.ids(eligible=False) else None
    pairs = voldata.read_dataset(data, eligible=eligible)
    seen = sorted(set(meta.get("train_ids", [])) & {v.id for v, _ in pairs})
    if seen and not allow_train_eval:
        raise ConfigError(f"refusing to evaluate on training labels {seen[:3]}; pass --allow-train-eval to override")
    for vol, _ in pairs:
        expect = 1 if bcfg.mode == "2d" else None
        if expect is not None and vol.spatial_shape[0] != expect:
            raise DataIOError(f"{vol.id}: a 2-D checkpoint cannot evaluate volume of shape {vol.spatial_shape}")
    records = evaluate_store(store, bcfg, cfg, pairs)
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    segmetrics.write_csv(records, out)
    return records


def _mean_row(records, field_name):
    rows = segmetrics.summarize(records)
    return float(np.mean([getattr(r, field_name) for r in rows]))


def ablation_rows(run):
    """Toggle grid plus optional gcn_level sweep, all from one pre-trained model and seed."""
    train_pairs, heldout = load_data(run)
    if not heldout:
        raise ConfigError("ablate needs held-out volumes (holdout >= 1 or non-eligible volumes in data_dir)")
    base = run.train
    split = voldata.split_dataset(train_pairs, base.labeled_ratio, base.seed)
    root = os.path.join(run.out_dir, "ablation")
    _write_config(run, root)
    bcfg0 = _model_config(run, base, train_pairs)
    pre = trainer.pretrain(split, base, bcfg0, os.path.join(root, "pretrain", "train.log.jsonl"))
    pretrained = pre.student.copy()

    plan = [(name, sa, cc, None) for name, sa, cc in TOGGLE_ROWS]
    if run.ablation.gcn_sweep:
        plan += [(f"gcn_level={lv}", True, True, lv) for lv in range(1, run.model.levels + 1)]
    done = {}
    rows = []
    for name, sa, cc, level in plan:
        cfg = dataclasses.replace(base, sa_enabled=sa, cc_enabled=cc, gcn_level=level)
        bcfg = _model_config(run, cfg, train_pairs)
        key = (sa, cc, bcfg.gcn_level)
        log_rel = os.path.join(name.replace("+", "plus_").replace("=", "_"), "train.log.jsonl")
        if key in done:
            # an identical configuration was already trained (e.g. the sweep's deepest level)
            result = dict(done[key], row=name, gcn_level=bcfg.gcn_level)
            rows.append(result)
            continue
        store = trainer.merge_params(trainer.init_params(bcfg, cfg), pretrained)
        state = trainer.selftrain_state(bcfg, cfg, store, split.labeled_ids)
        trainer.run_selftrain(state, split, os.path.join(root, log_rel))
        records = evaluate_store(state.teacher, bcfg, cfg, heldout)
        result = {
            "row": name, "sa_enabled": int(sa), "cc_enabled": int(cc), "gcn_level": bcfg.gcn_level,
            "seed": cfg.seed, "dice": _mean_row(records, "dice"), "jaccard": _mean_row(records, "jaccard"),
            "hd95": _mean_row(records, "hd95"), "asd": _mean_row(records, "asd"),
            "l_all_final": state.log[-1]["l_all"] if state.log else float("nan"), "log": log_rel,
        }
        done[key] = result
        rows.append(result)
        log.info("ablate %s: dice %.4f", name, result["dice"])
    with open(os.path.join(root, "ablation.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_HEADER)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in ABLATION_HEADER])
    return rows


def run_gradcheck(module="all", stream=None):
    stream = stream or sys.stdout
    reports = gradsuite.run_suite(None if module == "all" else module)
    if not reports:
        raise ConfigError(f"no gradient checks registered for module {module!r}")
    for r in reports:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.subgraph:32s} seed={r.seed} max_rel_err={r.max_rel_err:.3e} {status}", file=stream)
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed", file=stream)
    return not failed


# argument handling


def _load_run(args):
    return _apply_toggles(RunConfig.load(args.config), args)


def cmd_gen_data(args):
    spec, holdout = _spec_from_file(args.spec)
    train, held = phantom_dataset(spec, holdout)
    voldata.write_dataset(train + held, args.out, holdout=holdout, spec=spec)
    print(f"wrote {len(train) + len(held)} volumes ({len(held)} held out) to {args.out}")
    return 0


def cmd_pretrain(args):
    run_pretrain(_load_run(args))
    return 0


def cmd_selftrain(args):
    run_selftrain(_load_run(args), args.init)
    return 0


def cmd_eval(args):
    records = run_eval(args.ckpt, args.data, args.out, args.net, args.allow_train_eval)
    for r in segmetrics.summarize(records):
        print(f"class {r.class_id}: dice {r.dice:.4f} jaccard {r.jaccard:.4f} hd95 {r.hd95:.3f} asd {r.asd:.3f}")
    return 0


def cmd_ablate(args):
    for r in ablation_rows(_load_run(args)):
        print(f"{r['row']:14s} dice {r['dice']:.4f}")
    return 0


def cmd_gradcheck(args):
    return 0 if run_gradcheck(args.module) else 3


def build_parser():
    p = argparse.ArgumentParser(prog="graphcl", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic phantom dataset")
    g.add_argument("--spec", required=True, help="JSON phantom spec (or a run config)")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen_data)

    for name, func in (("pretrain", cmd_pretrain), ("selftrain", cmd_selftrain)):
        t = sub.add_parser(name, help=f"{name} phase")
        t.add_argument("--config", required=True)
        t.add_argument("--out-dir", help="override the config's out_dir")
        t.add_argument("--no-sa", action="store_true", help="disable structure-aware alignment")
        t.add_argument("--no-cc", action="store_true", help="disable the clustering loss")
        if name == "selftrain":
            t.add_argument("--init", help="pre-trained checkpoint (default: <out_dir>/pretrain/student)")
        t.set_defaults(func=func)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    e.add_argument("--ckpt", required=True, help="checkpoint file/prefix or run directory")
    e.add_argument("--data", required=True)
    e.add_argument("--out", default="metrics.csv")
    e.add_argument("--net", choices=("teacher", "student"), default="teacher")
    e.add_argument("--allow-train-eval", action="store_true")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="toggle grid and gcn-level sweep")
    a.add_argument("--config", required=True)
    a.add_argument("--out-dir")
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    c.add_argument("--module", default="all", choices=("all", "netcore", "structalign", "graphcluster", "losses"))
    c.set_defaults(func=cmd_gradcheck)
    return p


def _threads():
    raw = os.environ.get("GRAPHCL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"GRAPHCL_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"GRAPHCL_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        with threadpool_limits(limits=_threads()):
            return args.func(args)
    except GraphCLError as exc:
        print(f"graphcl {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"graphcl {args.command}: I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
