import csv
import math

import numpy as np
import pytest

from daomtl.config import TrainConfig
from daomtl.data import make_batch, split, synth_generate
from daomtl.errors import NumericError
from daomtl.trainer import Trainer, evaluate, params_fingerprint, run, sweep

SMALL = dict(vocab_size=256, d_embed=8, d_hidden=8, d_mid=4, base_lr=1e-3, warmup_steps=2, epochs=2,
             synth_n=60, seed=3)


def small_cfg(**kw):
    return TrainConfig(**{**SMALL, **kw}).validate()


@pytest.fixture(scope="module")
def corpus():
    return synth_generate(60, seed=3)


def batch_of(corpus, idx, cfg):
    return make_batch(corpus, idx, cfg.vocab_size, cfg.max_len)


def test_first_dao_step_has_equal_weights(corpus):
    cfg = small_cfg()
    tr = Trainer(cfg, steps_per_epoch=6)
    rec = tr.train_step(batch_of(corpus, range(10), cfg))
    assert rec.w_r == rec.w_c == 0.5
    assert abs(rec.lambda_r + rec.lambda_c - 1) < 1e-12
    assert tr.dao_calls == 1 and rec.lr == 0.0


def test_single_class_batch_has_zero_alpha_gradient(corpus):
    cfg = small_cfg()
    tr = Trainer(cfg)
    idx = [i for i, e in enumerate(corpus) if e.label == 2][:5]
    rec = tr.train_step(batch_of(corpus, idx, cfg))
    assert rec.d_alpha == 0.0 and rec.d_beta == 0.0


def _np_forward(model, ids, lengths):
    # independent numpy re-implementation of the model forward in eval mode
    p = {n: t.data for n, t in model.store.items()}
    mask = (np.arange(ids.shape[1])[None, :] < lengths[:, None]).astype(float)
    pooled = (p["backbone.embed.table"][ids] * mask[..., None]).sum(1) / lengths[:, None]
    h = np.tanh(pooled @ p["backbone.fc1.W"].T + p["backbone.fc1.b"]) @ p["backbone.fc2.W"].T + p["backbone.fc2.b"]
    sig = 1 / (1 + np.exp(-(h @ p["reg_head.ll1.W"].T + p["reg_head.ll1.b"])))
    scores = (sig @ p["reg_head.ll2.W"].T + p["reg_head.ll2.b"])[:, 0]
    logits = np.tanh(h @ p["cls_head.ll1.W"].T + p["cls_head.ll1.b"]) @ p["cls_head.ll2.W"].T + p["cls_head.ll2.b"]
    return scores, logits


def test_dao_step_matches_straight_line_oracle(corpus):
    cfg = small_cfg(head_dropout=0.0, dao_fc2_init="xavier")
    tr = Trainer(cfg, steps_per_epoch=6)
    batch = batch_of(corpus, [0, 1, 2, 3], cfg)
    scores, logits = _np_forward(tr.model, batch.ids, batch.lengths)
    dao = {n: t.data.copy() for n, t in tr.dao.store.items()}
    rec = tr.train_step(batch)

    y, z = batch.y, batch.z
    loss_r = np.mean((scores - y) ** 2)
    shifted = logits - logits.max(1, keepdims=True)
    ce = -(shifted[np.arange(4), z] - np.log(np.exp(shifted).sum(1)))
    alpha, beta = dao["dao.alpha"].item(), dao["dao.beta"].item()
    loss_imb = 0.0
    for k in np.unique(z):
        pk = np.mean(z == k)
        loss_imb += pk ** -beta * (pk * ce[z == k].mean() - alpha * math.log(pk))
    x = np.array([rec.lambda_r * loss_r, rec.lambda_c * loss_imb])
    hid = np.maximum(dao["dao.fc1.W"] @ x + dao["dao.fc1.b"], 0)
    s = dao["dao.fc2.W"] @ hid + dao["dao.fc2.b"]
    w = np.exp(s - s.max()) / np.exp(s - s.max()).sum()
    loss_mtl = rec.lambda_r * w[0] * loss_r + rec.lambda_c * w[1] * loss_imb

    assert abs(rec.loss_r - loss_r) < 1e-10 and abs(rec.loss_c - ce.mean()) < 1e-10
    assert abs(rec.loss_imb - loss_imb) < 1e-10
    assert abs(rec.w_c - w[1]) < 1e-10
    assert abs(rec.loss_mtl - loss_mtl) < 1e-10


def test_constant_step_record_identity(corpus):
    cfg = small_cfg(mode="constant", w_r=0.9, w_c=0.1)
    tr = Trainer(cfg)
    rec = tr.train_step(batch_of(corpus, range(10), cfg))
    assert (rec.lambda_r, rec.lambda_c, rec.w_r, rec.w_c) == (1.0, 1.0, 0.9, 0.1)
    assert abs(rec.loss_mtl - (0.9 * rec.loss_r + 0.1 * rec.loss_c)) <= 1e-12
    assert tr.dao is None and tr.dao_calls == 0


def test_constant_zero_weight_matches_single_task(corpus):
    a = Trainer(small_cfg(mode="constant", w_r=1.0, w_c=0.0), steps_per_epoch=6)
    b = Trainer(small_cfg(mode="single_task"), steps_per_epoch=6)
    for start in range(0, 60, 10):
        ra = a.train_step(batch_of(corpus, range(start, start + 10), a.cfg))
        rb = b.train_step(batch_of(corpus, range(start, start + 10), b.cfg))
        assert ra.loss_mtl == rb.loss_mtl
    assert params_fingerprint(a) == params_fingerprint(b)


def test_nan_steps_abort_then_halt(corpus):
    cfg = small_cfg()
    tr = Trainer(cfg)
    tr.model.store["reg_head.ll2.b"].data[...] = math.nan
    b = batch_of(corpus, range(10), cfg)
    assert tr.train_step(b).aborted == 1
    assert tr.train_step(b).aborted == 1
    with pytest.raises(NumericError):
        tr.train_step(b)


def test_zero_init_heads_predict_a_constant_class(corpus):
    cfg = small_cfg(zero_init_heads=True)
    train, val = split(corpus, 0.9, cfg.seed)
    tr = Trainer(cfg)
    _, logits = tr.predict(val)
    assert np.all(logits == 0)
    rep = evaluate(tr, val)
    assert rep.acc == np.mean(val.labels == 0)
    majority = int(np.bincount(train.labels, minlength=5).argmax())
    tr.model.store["cls_head.ll2.b"].data[...] = np.eye(5)[majority]
    rep = evaluate(tr, val)
    assert rep.acc == np.mean(val.labels == majority) == np.bincount(val.labels).max() / len(val)
    assert rep.weighted_recall == rep.acc


def test_evaluate_is_deterministic(corpus):
    tr = Trainer(small_cfg())
    a, b = evaluate(tr, corpus), evaluate(tr, corpus)
    assert a == b


def test_epochs_zero_is_evaluation_only(tmp_path):
    res = run(small_cfg(epochs=0), tmp_path)
    assert res.records == [] and len(res.epoch_rows) == 1
    assert (tmp_path / "steps.csv").read_text().count("\n") == 1
    assert res.checkpoint.exists()


def test_run_logs_and_checkpoint_resume(tmp_path):
    cfg = small_cfg(keep_epoch_checkpoints=True)
    res = run(cfg, tmp_path / "a")
    rows = list(csv.DictReader(res.steps_log.open()))
    assert len(rows) == len(res.records) == 2 * 6
    for r in rows:
        assert abs(float(r["w_r"]) + float(r["w_c"]) - 1) < 1e-9
    resumed = run(cfg, tmp_path / "b", resume=tmp_path / "a" / "epoch_001.bin")
    assert [vars(r) for r in resumed.records] == [vars(r) for r in res.records if r.epoch == 2]
    assert Trainer.load(res.checkpoint).step_count == 12


def test_sweep_rows_share_initialisation(tmp_path):
    rows = sweep(small_cfg(epochs=1), tmp_path, wc_values=(0.1, 0.2))
    assert [r["mode"] for r in rows] == ["constant", "constant", "dao"]
    assert len({r["init_fingerprint"] for r in rows}) == 1
    text = (tmp_path / "sweep.csv").read_text().splitlines()
    assert text[0] == "mode,w_c,mse,acc,weighted_f1,init_fingerprint" and len(text) == 4


def test_lora_run_leaves_base_frozen(tmp_path, corpus):
    cfg = small_cfg(lora_rank=2)
    tr = Trainer(cfg, steps_per_epoch=6)
    frozen = {n: p.data.copy() for n, p in tr.model.store.items() if not p.requires_grad}
    for start in range(0, 60, 10):
        tr.train_step(batch_of(corpus, range(start, start + 10), cfg))
    assert frozen and all(tr.model.store[n].data.tobytes() == a.tobytes() for n, a in frozen.items())
    assert set(tr.model.trunk_names()) == {n for n in tr.model.store.names(trainable=True)
                                           if n.startswith("backbone.")}
