"""Training loops (DAO, constant-weight, single-task), evaluation, persistence and sweeps."""
from __future__ import annotations

import csv
import hashlib
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import losses as L
from . import tensor as T
from .checkpoint import read_checkpoint, write_checkpoint
from .config import TrainConfig
from .dao import DaoConfig, DaoNetwork
from .data import Batch, Corpus, batches, load_corpus, make_batch, split, synth_generate
from .errors import DomainError, FormatError, NumericError
from .metrics import MetricReport, report
from .model import ModelConfig, SentimentModel
from .optim import Adam, CosineSchedule

log = logging.getLogger(__name__)

MAX_CONSECUTIVE_ABORTS = 3
EVAL_BATCH = 256


@dataclass
class StepRecord:
    epoch: int
    batch: int
    step: int
    lambda_r: float
    lambda_c: float
    w_r: float
    w_c: float
    loss_r: float
    loss_c: float
    loss_imb: float
    loss_mtl: float
    alpha: float
    beta: float
    d_alpha: float
    d_beta: float
    lr: float
    degenerate: int = 0
    aborted: int = 0


STEP_FIELDS = [f.name for f in fields(StepRecord)]
EPOCH_FIELDS = ["epoch", "steps", "aborted", "mean_loss_mtl", "mean_loss_r", "mean_loss_c", "mean_w_c",
                "mse", "mae", "rmse", "r2", "acc", "weighted_precision", "weighted_recall", "weighted_f1"]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def model_config_from(cfg: TrainConfig) -> ModelConfig:
    return ModelConfig(vocab_size=cfg.vocab_size, d_embed=cfg.d_embed, d_hidden=cfg.d_hidden, d_mid=cfg.d_mid,
                       head_dropout=cfg.head_dropout, lora_rank=cfg.lora_rank,
                       lora_alpha=cfg.lora_alpha or None, zero_init_heads=cfg.zero_init_heads)


class Trainer:
    """Owns the model, the optional DAO network and the model optimizer."""

    def __init__(self, cfg: TrainConfig, steps_per_epoch: int = 1):
        self.cfg = cfg.validate()
        self.model = SentimentModel(model_config_from(cfg), seed=cfg.seed)
        self.optimizer = Adam(lr=cfg.base_lr, eps=cfg.eps, weight_decay=cfg.weight_decay, variant="adamw")
        self.schedule = CosineSchedule(cfg.base_lr, max(cfg.epochs * steps_per_epoch, 1), cfg.warmup_steps)
        self.dao = None
        if cfg.mode == "dao":
            self.dao = DaoNetwork(DaoConfig(hidden=cfg.dao_hidden, lr=cfg.dao_lr, alpha_init=cfg.alpha_init,
                                            beta_init=cfg.beta_init, alpha_bounds=(0.0, cfg.alpha_max),
                                            beta_bounds=(0.0, cfg.beta_max), fc2_init=cfg.dao_fc2_init,
                                            seed=cfg.seed + 1))
        self.step_count = 0
        self.epoch = 0
        self.dao_calls = 0
        self.consecutive_aborts = 0

    # ------------------------------------------------------------ helpers
    def _norm_scope(self):
        if self.cfg.grad_norm_scope == "trunk":
            return self.model.trunk_names()
        return self.model.store.names(trainable=True)

    def _forward(self, batch: Batch):
        self.model.train()
        scores, logits = self.model(batch.ids, batch.lengths)
        loss_r = L.mse_loss(scores, batch.y)
        loss_c, per_class = L.ce_loss_per_class(logits, batch.z)
        return loss_r, loss_c, per_class

    def _apply_model_update(self, lr):
        grads = T.gradient_map(self.model.store)
        for g in grads.values():
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite model gradient")
        self.optimizer.step(self.model.store, grads, lr=lr)

    def _abort(self, epoch, batch_idx, lr, exc) -> StepRecord:
        self.consecutive_aborts += 1
        self.model.store.zero_grad()
        if self.dao is not None:
            self.dao.store.zero_grad()
        log.warning("step %d aborted: %s", self.step_count, exc)
        nan = math.nan
        rec = StepRecord(epoch, batch_idx, self.step_count, nan, nan, nan, nan, nan, nan, nan, nan,
                         nan, nan, nan, nan, lr, aborted=1)
        self.step_count += 1
        if self.consecutive_aborts >= MAX_CONSECUTIVE_ABORTS:
            raise NumericError(f"training halted after {MAX_CONSECUTIVE_ABORTS} consecutive aborted steps")
        return rec

    # ------------------------------------------------------------ steps
    def train_step(self, batch: Batch, epoch=0, batch_idx=0) -> StepRecord:
        if self.cfg.mode == "dao":
            return self.train_step_dao(batch, epoch, batch_idx)
        if self.cfg.mode == "constant":
            return self.train_step_constant(batch, self.cfg.w_r, self.cfg.w_c, epoch, batch_idx)
        return self.train_step_constant(batch, 1.0, 0.0, epoch, batch_idx)

    def train_step_dao(self, batch: Batch, epoch=0, batch_idx=0) -> StepRecord:
        lr = self.schedule(self.step_count)
        store, dao = self.model.store, self.dao
        try:
            loss_r, loss_c, per_class = self._forward(batch)
            scope = self._norm_scope()
            # separate passes for the two task-gradient norms over the shared parameters
            store.zero_grad()
            T.backward(loss_r)
            g_r = T.grad_norm(store, scope)
            store.zero_grad()
            T.backward(loss_c)
            g_c = T.grad_norm(store, scope)
            store.zero_grad()

            alpha, beta = dao.alpha_value, dao.beta_value
            stats = L.class_stats(batch.z)
            v = L.class_weights(stats, beta)
            loss_imb = L.imbalanced_loss(stats, v, per_class, alpha)
            lam_r, lam_c, degenerate = L.lambda_coeffs(g_r, g_c)

            self.dao_calls += 1
            weights = dao(lam_r * loss_r.item(), lam_c * loss_imb.item())
            w_r, w_c = T.take(weights, [0]), T.take(weights, [1])
            loss_mtl = L.total_loss(lam_r, lam_c, w_r, w_c, loss_r, loss_imb)
            values = [loss_r.item(), loss_c.item(), loss_imb.item(), loss_mtl.item()]
            if not all(math.isfinite(x) for x in values):
                raise NumericError(f"non-finite loss values {values}")

            dao.store.zero_grad()
            T.backward(loss_mtl)
            w_r_val, w_c_val = (float(x) for x in weights.data)
            d_alpha = L.alpha_grad(lam_c, w_c_val, v, stats)
            d_beta = L.beta_grad(lam_c, w_c_val, stats, {k: t.item() for k, t in per_class.items()}, alpha, beta)
            fc_grads = T.gradient_map(dao.store)
            if not (math.isfinite(d_alpha) and math.isfinite(d_beta)):
                raise NumericError("non-finite alpha/beta gradient")
            self._apply_model_update(lr)
        except (NumericError, DomainError) as exc:
            return self._abort(epoch, batch_idx, lr, exc)
        dao.step(fc_grads, d_alpha, d_beta)
        store.zero_grad()
        dao.store.zero_grad()
        self.consecutive_aborts = 0
        rec = StepRecord(epoch, batch_idx, self.step_count, lam_r, lam_c, w_r_val, w_c_val, values[0], values[1],
                         values[2], values[3], alpha, beta, d_alpha, d_beta, lr, degenerate=int(degenerate))
        self.step_count += 1
        return rec

    def train_step_constant(self, batch: Batch, w_r: float, w_c: float, epoch=0, batch_idx=0) -> StepRecord:
        """Fixed-weight step; the classification slot of the record holds plain cross-entropy."""
        lr = self.schedule(self.step_count)
        store = self.model.store
        try:
            loss_r, loss_c, _ = self._forward(batch)
            loss_mtl = T.add(T.scale(loss_r, w_r), T.scale(loss_c, w_c))
            values = [loss_r.item(), loss_c.item(), loss_mtl.item()]
            if not all(math.isfinite(x) for x in values):
                raise NumericError(f"non-finite loss values {values}")
            store.zero_grad()
            T.backward(loss_mtl)
            self._apply_model_update(lr)
        except (NumericError, DomainError) as exc:
            return self._abort(epoch, batch_idx, lr, exc)
        store.zero_grad()
        self.consecutive_aborts = 0
        rec = StepRecord(epoch, batch_idx, self.step_count, 1.0, 1.0, w_r, w_c, values[0], values[1], values[1],
                         values[2], 0.0, 0.0, 0.0, 0.0, lr)
        self.step_count += 1
        return rec

    # ------------------------------------------------------------ inference
    def predict(self, corpus: Corpus):
        """Return ``(scores, logits)`` for a corpus in eval mode."""
        self.model.eval()
        out_s, out_l = [], []
        for b in batches(corpus, EVAL_BATCH, shuffle=False, vocab_size=self.cfg.vocab_size,
                         max_len=self.cfg.max_len):
            s, lg = self.model(b.ids, b.lengths)
            out_s.append(s.data)
            out_l.append(lg.data)
        self.model.train()
        return np.concatenate(out_s), np.concatenate(out_l)

    def evaluate(self, corpus: Corpus) -> MetricReport:
        return evaluate(self, corpus)

    # ------------------------------------------------------------ persistence
    def save(self, path, extra=None):
        opt_meta, opt_arrays = self.optimizer.state()
        meta = {
            "config": self.cfg.to_dict(),
            "epoch": self.epoch,
            "step": self.step_count,
            "total_steps": self.schedule.total_steps,
            "dao_calls": self.dao_calls,
            "optimizer": opt_meta,
            "rng": self.model.rng_states(),
            "dao": self.dao.snapshot() if self.dao is not None else None,
            "extra": extra or {},
        }
        tensors = {f"model/{n}": p.data for n, p in self.model.store.items()}
        tensors.update({f"adam/{k}": a for k, a in opt_arrays.items()})
        write_checkpoint(path, meta, tensors)

    @classmethod
    def load(cls, path) -> "Trainer":
        meta, tensors = read_checkpoint(path)
        try:
            cfg = TrainConfig.from_dict(meta["config"])
            tr = cls(cfg)
            tr.schedule.total_steps = int(meta["total_steps"])
            for n, p in tr.model.store.items():
                arr = tensors[f"model/{n}"]
                if arr.shape != p.shape:
                    raise FormatError(f"checkpoint tensor {n} has shape {arr.shape}, expected {p.shape}")
                p.data[...] = arr
            tr.optimizer.load_state(meta["optimizer"],
                                    {k[len("adam/"):]: a for k, a in tensors.items() if k.startswith("adam/")})
            tr.model.set_rng_states(meta["rng"])
            if meta["dao"] is not None:
                tr.dao = DaoNetwork.from_snapshot(meta["dao"])
            tr.epoch = int(meta["epoch"])
            tr.step_count = int(meta["step"])
            tr.dao_calls = int(meta["dao_calls"])
        except KeyError as exc:
            raise FormatError(f"checkpoint missing entry {exc}") from exc
        return tr


def evaluate(trainer: Trainer, corpus: Corpus) -> MetricReport:
    """Full-corpus metrics with dropout off; the predicted class is the arg-max logit."""
    if len(corpus) == 0:
        raise DomainError("cannot evaluate an empty corpus")
    scores, logits = trainer.predict(corpus)
    if trainer.cfg.clamp_eval:
        scores = np.clip(scores, -1.0, 1.0)
    return report(scores, corpus.scores, np.argmax(logits, axis=1), corpus.labels)


def load_data(cfg: TrainConfig):
    if cfg.data:
        corpus = load_corpus(cfg.data)
    else:
        corpus = synth_generate(cfg.synth_n, cfg.synth_mix, cfg.synth_noise, cfg.synth_seed)
    return split(corpus, cfg.split_ratio, cfg.seed)


def params_fingerprint(trainer: Trainer) -> str:
    h = hashlib.sha256()
    for n, p in trainer.model.store.items():
        h.update(n.encode())
        h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


@dataclass
class RunResult:
    report: MetricReport
    steps_log: Path
    epochs_log: Path
    checkpoint: Path
    records: list
    epoch_rows: list
    init_fingerprint: str = ""


def _epoch_row(epoch, recs, rep: MetricReport):
    ok = [r for r in recs if not r.aborted]

    def avg(attr):
        return float(np.mean([getattr(r, attr) for r in ok])) if ok else math.nan

    row = {"epoch": epoch, "steps": len(recs), "aborted": len(recs) - len(ok),
           "mean_loss_mtl": avg("loss_mtl"), "mean_loss_r": avg("loss_r"), "mean_loss_c": avg("loss_c"),
           "mean_w_c": avg("w_c")}
    row.update({k: v for k, v in asdict(rep).items() if k in EPOCH_FIELDS})
    return row


def run(cfg: TrainConfig, out_dir, resume=None, data=None) -> RunResult:
    """Train per ``cfg`` writing ``steps.csv``, ``epochs.csv`` and ``checkpoint.bin`` into ``out_dir``.

    ``resume`` names a checkpoint to continue from (its config wins over
    ``cfg``).  ``data`` optionally supplies a pre-split ``(train, val)`` pair.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        trainer = Trainer.load(resume)
        cfg = trainer.cfg
    train, val = data if data is not None else load_data(cfg)
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    if resume is None:
        trainer = Trainer(cfg, steps_per_epoch)
    fingerprint = params_fingerprint(trainer)
    steps_path, epochs_path, ckpt_path = out / "steps.csv", out / "epochs.csv", out / "checkpoint.bin"
    records, epoch_rows = [], []
    rep = None
    with steps_path.open("w", newline="") as sf, epochs_path.open("w", newline="") as ef:
        sw, ew = csv.writer(sf, lineterminator="\n"), csv.writer(ef, lineterminator="\n")
        sw.writerow(STEP_FIELDS)
        ew.writerow(EPOCH_FIELDS)
        if cfg.epochs == 0:
            rep = evaluate(trainer, val)
            row = _epoch_row(0, [], rep)
            epoch_rows.append(row)
            ew.writerow([_fmt(row[k]) for k in EPOCH_FIELDS])
        try:
            for epoch in range(trainer.epoch + 1, cfg.epochs + 1):
                recs = []
                for i, batch in enumerate(batches(train, cfg.batch_size, seed=cfg.seed, epoch=epoch,
                                                  vocab_size=cfg.vocab_size, max_len=cfg.max_len)):
                    rec = trainer.train_step(batch, epoch, i)
                    recs.append(rec)
                    sw.writerow([_fmt(getattr(rec, k)) for k in STEP_FIELDS])
                records.extend(recs)
                trainer.epoch = epoch
                if epoch % max(cfg.eval_every, 1) == 0 or epoch == cfg.epochs:
                    rep = evaluate(trainer, val)
                    row = _epoch_row(epoch, recs, rep)
                    epoch_rows.append(row)
                    ew.writerow([_fmt(row[k]) for k in EPOCH_FIELDS])
                    log.info("epoch %d  L_mtl %.5f  val mse %.5f  acc %.4f", epoch, row["mean_loss_mtl"],
                             rep.mse, rep.acc)
                trainer.save(ckpt_path)
                if cfg.keep_epoch_checkpoints:
                    trainer.save(out / f"epoch_{epoch:03d}.bin")
                sf.flush()
                ef.flush()
        finally:
            sf.flush()
            ef.flush()
    if rep is None:
        rep = evaluate(trainer, val)
    if not ckpt_path.exists():
        trainer.save(ckpt_path)
    return RunResult(rep, steps_path, epochs_path, ckpt_path, records, epoch_rows, fingerprint)


SWEEP_GRID = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30)
SWEEP_FIELDS = ["mode", "w_c", "mse", "acc", "weighted_f1", "init_fingerprint"]


def sweep(cfg: TrainConfig, out_dir, wc_values=SWEEP_GRID, include_dao=True):
    """One constant-weight run per ``w_c`` (regression weight ``1 - w_c``) plus one DAO run, same seeds.

    Each returned row also carries the full :class:`RunResult` under ``"result"``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_data(cfg)
    rows = []
    for wc in wc_values:
        res = run(cfg.replace(mode="constant", w_c=float(wc), w_r=1.0 - float(wc)), out / f"constant_{wc:.2f}",
                  data=data)
        rows.append({"mode": "constant", "w_c": float(wc), "mse": res.report.mse, "acc": res.report.acc,
                     "weighted_f1": res.report.weighted_f1, "init_fingerprint": res.init_fingerprint,
                     "result": res})
    if include_dao:
        t0 = time.perf_counter()
        res = run(cfg.replace(mode="dao"), out / "dao", data=data)
        rows.append({"mode": "dao", "w_c": math.nan, "mse": res.report.mse, "acc": res.report.acc,
                     "weighted_f1": res.report.weighted_f1, "init_fingerprint": res.init_fingerprint,
                     "result": res, "seconds": time.perf_counter() - t0})
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in SWEEP_FIELDS])
    return rows


__all__ = ["Trainer", "StepRecord", "RunResult", "run", "sweep", "evaluate", "load_data", "make_batch",
           "SWEEP_GRID"]
