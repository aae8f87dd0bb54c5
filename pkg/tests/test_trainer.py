import json

import numpy as np
import pytest

from graphcl import trainer, voldata
from graphcl.config import ModelConfig, TrainConfig
from graphcl.errors import ConfigError, StateError
from graphcl.netcore.params import ParamStore

SHAPE = (1, 16, 16)


def setup(levels=2, **overrides):
    pairs = voldata.generate_phantoms(voldata.PhantomSpec(n_volumes=8, shape=SHAPE))
    kw = dict(iters_pretrain=2, iters_selftrain=3, labeled_ratio=0.25, dtype="float64")
    kw.update(overrides)
    cfg = TrainConfig(**kw)
    split = voldata.split_dataset(pairs, cfg.labeled_ratio, cfg.seed)
    bcfg = trainer.backbone_config(ModelConfig(levels=levels, base_channels=2), cfg, 2, SHAPE)
    return split, cfg, bcfg


def test_pseudo_label_rules():
    probs = np.array([[0.3, 0.7], [0.6, 0.4], [0.5, 0.5]])
    logits = np.log(probs).T[None, :, :]          # (1, 2, 3)
    assert trainer.pseudo_label(logits).tolist() == [[1, 0, 1]]
    assert trainer.pseudo_label(np.zeros((1, 3, 2))).tolist() == [[0, 0]]


def test_ema_rules():
    t = ParamStore({"w": np.array([1.0, 2.0])}, role="teacher")
    s = ParamStore({"w": np.array([0.0, 4.0])})
    frozen = t["w"].copy()
    trainer.ema_update(t, s, 1.0)
    assert t["w"].tobytes() == frozen.tobytes()
    trainer.ema_update(t, s, 0.99)
    assert t["w"][0] == pytest.approx(0.99, abs=1e-15)
    trainer.ema_update(t, s, 0.0)
    assert t["w"].tobytes() == s["w"].tobytes()
    with pytest.raises(StateError):
        trainer.ema_update(t, ParamStore({"v": np.zeros(2)}), 0.5)


def test_zero_pretrain_iterations_copy_the_initialisation():
    split, cfg, bcfg = setup(iters_pretrain=0)
    state = trainer.pretrain(split, cfg, bcfg)
    fresh = trainer.init_params(bcfg, cfg)
    for name, arr in fresh.items():
        assert state.teacher[name].tobytes() == arr.tobytes()


def test_pretrain_is_deterministic():
    split, cfg, bcfg = setup(iters_pretrain=3)
    a, b = trainer.pretrain(split, cfg, bcfg), trainer.pretrain(split, cfg, bcfg)
    assert trainer.params_hash(a.student) == trainer.params_hash(b.student)
    assert [e["l_seg"] for e in a.pretrain_log] == [e["l_seg"] for e in b.pretrain_log]


def test_pretrain_touches_only_the_backbone():
    split, cfg, bcfg = setup(iters_pretrain=2)
    state = trainer.pretrain(split, cfg, bcfg)
    fresh = trainer.init_params(bcfg, cfg)
    for name in fresh.names():
        same = state.student[name].tobytes() == fresh[name].tobytes()
        assert same == (name.startswith("sa.") or name.startswith("cc.")), name


def _step(state, split):
    return trainer.selftrain_step(state, trainer.draw_selftrain_batch(state, split))


def test_baseline_report_has_no_cc_term():
    split, cfg, bcfg = setup(sa_enabled=False, cc_enabled=False)
    state = trainer.pretrain(split, cfg, bcfg)
    report, _ = _step(state, split)
    assert report.l_cc is None and "l_cc" not in report.to_log()
    assert report.l_all == report.l_in + report.l_out


def test_zero_kappa_update_equals_cc_off():
    results = []
    for cc in (True, False):
        split, cfg, bcfg = setup(kappa=0.0, cc_enabled=cc)
        state = trainer.pretrain(split, cfg, bcfg)
        _step(state, split)
        results.append({n: a.tobytes() for n, a in state.student.items()})
    assert results[0] == results[1]


def test_one_step_moves_teacher_by_ema_algebra():
    split, cfg, bcfg = setup(lambda_ema=0.9)
    state = trainer.pretrain(split, cfg, bcfg)
    before = state.teacher.copy()
    _step(state, split)
    for name, t in state.teacher.items():
        expected = 0.9 * before[name] + 0.1 * state.student[name]
        assert np.allclose(t, expected, rtol=0, atol=1e-15)


def test_toggle_integrity_ignores_graph_block_values():
    hashes = []
    for seed_shift in (0, 1):
        split, cfg, bcfg = setup(sa_enabled=False, cc_enabled=False)
        state = trainer.pretrain(split, cfg, bcfg)
        for name in state.student.names():
            if name.startswith(("sa.", "cc.")):
                state.student[name] = state.student[name] + seed_shift * 3.0
                state.teacher[name] = state.student[name]
        for _ in range(2):
            _step(state, split)
        hashes.append([state.student[n].tobytes() for n in sorted(trainer.backbone_names(bcfg))])
    assert hashes[0] == hashes[1]


def test_teacher_audit(monkeypatch):
    split, cfg, bcfg = setup()
    state = trainer.pretrain(split, cfg, bcfg)
    real_step = state.optimizer.step

    def leaky(params, grads, lr):
        real_step(params, grads, lr)
        state.teacher["head.b"] += 1.0

    monkeypatch.setattr(state.optimizer, "step", leaky)
    with pytest.raises(StateError):
        _step(state, split)


def test_batch_halves_and_log(tmp_path):
    split, cfg, bcfg = setup(iters_selftrain=4)
    state = trainer.pretrain(split, cfg, bcfg)
    labeled, unlabeled = trainer.draw_selftrain_batch(state, split)
    assert len(labeled) == len(unlabeled) == cfg.batch_size // 2
    path = tmp_path / "train.log.jsonl"
    state = trainer.pretrain(split, cfg, bcfg)
    trainer.run_selftrain(state, split, str(path), str(tmp_path / "ckpt"))
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    first = json.loads(lines[0])
    assert list(first) == ["iter", "l_in", "l_out", "l_all", "l_cc", "lr"]
    assert (tmp_path / "ckpt" / "teacher.ckpt.json").exists()


def test_selftrain_log_is_reproducible(tmp_path):
    texts = []
    for run in ("a", "b"):
        split, cfg, bcfg = setup(dtype="float32")
        state = trainer.pretrain(split, cfg, bcfg)
        trainer.run_selftrain(state, split, str(tmp_path / run / "log.jsonl"))
        texts.append((tmp_path / run / "log.jsonl").read_bytes())
    assert texts[0] == texts[1]


def test_resuming_from_a_checkpoint_matches_in_process(tmp_path):
    from graphcl.netcore.params import load_checkpoint
    split, cfg, bcfg = setup(dtype="float32")
    state = trainer.pretrain(split, cfg, bcfg)
    trainer.write_state(state, str(tmp_path))
    trainer.run_selftrain(state, split)
    loaded, _ = load_checkpoint(str(tmp_path / "student"))
    resumed = trainer.selftrain_state(bcfg, cfg, loaded, split.labeled_ids)
    trainer.run_selftrain(resumed, split)
    assert resumed.log == state.log


def test_sa_requires_two_samples_at_prediction():
    split, cfg, bcfg = setup()
    state = trainer.pretrain(split, cfg, bcfg)
    vols = [v for v, _ in split.labeled] + split.unlabeled[:1]
    preds = trainer.predict(state.teacher, vols, bcfg, cfg, sa_on=True, batch=2)
    assert len(preds) == 3 and preds[0].shape == SHAPE


def test_augment_keeps_pairs_aligned(rng):
    bcfg = trainer.backbone_config(ModelConfig(), TrainConfig(), 2, SHAPE)
    img = rng.standard_normal((1,) + SHAPE)
    lbl = (img[0] > 0).astype(np.uint8)
    for (a, b) in trainer.augment([(img, lbl)] * 6, rng, bcfg):
        assert np.array_equal(a[0] > 0, b.astype(bool))


@pytest.mark.parametrize("field,value", [
    ("alpha", 1.5), ("kappa", -1), ("tau", 0), ("lambda_ema", 2), ("batch_size", 6),
    ("batch_size", 2), ("optimizer", "rmsprop"), ("mask_resample", "epoch"),
])
def test_train_config_validation(field, value):
    with pytest.raises(ConfigError, match=field):
        TrainConfig(**{field: value})


def test_mask_once_reuses_the_first_mask():
    split, cfg, bcfg = setup(mask_resample="once")
    state = trainer.pretrain(split, cfg, bcfg)
    first = trainer._mask_for(state, (16, 16))
    assert trainer._mask_for(state, (16, 16)) is first
