"""Desk-scale training checks: convergence, weight trend, sweep ordering, reproducibility.

These take minutes rather than seconds, so ``verify`` only runs them with
``--desk``.  The acceptance tests call the same functions.
"""
from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .trainer import SWEEP_GRID, load_data, run, sweep
from .verify import CheckResult

TIME_BUDGET = 300.0
SWEEP_MSE_SLACK = 1.05


def desk_config(**overrides) -> TrainConfig:
    """Synthetic benchmark settings; see the README for why lr and vocab differ from the defaults."""
    base = dict(mode="dao", epochs=20, batch_size=10, base_lr=1e-4, vocab_size=4096, seed=42,
                synth_n=2200, synth_mix=(0.05, 0.15, 0.60, 0.15, 0.05), synth_noise=0.3, synth_seed=42,
                split_ratio=0.9)
    base.update(overrides)
    return TrainConfig(**base).validate()


def run_desk_sweep(out_dir, cfg: TrainConfig | None = None, wc_values=SWEEP_GRID):
    cfg = cfg or desk_config()
    return sweep(cfg, Path(out_dir), wc_values=wc_values)


def check_training(dao_row, val_labels) -> CheckResult:
    res, secs = dao_row["result"], dao_row["seconds"]
    first = res.epoch_rows[0]["mean_loss_mtl"]
    last = res.epoch_rows[-1]["mean_loss_mtl"]
    majority = float(np.bincount(val_labels, minlength=5).max() / len(val_labels))
    ok = secs < TIME_BUDGET and last <= 0.5 * first and res.report.acc > majority + 0.05
    detail = (f"time {secs:.0f}s (<{TIME_BUDGET:.0f}), L_mtl first {first:.4f} last {last:.4f}, "
              f"acc {res.report.acc:.4f} vs majority {majority:.4f}+0.05")
    return CheckResult("desk training", ok, detail, secs)


def check_weight_trend(dao_row) -> CheckResult:
    recs = [r for r in dao_row["result"].records if not r.aborted]
    tenth = max(len(recs) // 10, 1)
    head = float(np.mean([r.w_c for r in recs[:tenth]]))
    tail = float(np.mean([r.w_c for r in recs[-tenth:]]))
    w0 = recs[0].w_c
    ok = tail < head and abs(w0 - 0.5) <= 0.05
    return CheckResult("w_c trend", ok, f"step-0 w_c {w0:.4f}, first 10% {head:.4f}, last 10% {tail:.4f}")


def check_sweep(rows) -> CheckResult:
    const = [r for r in rows if r["mode"] == "constant"]
    dao = next(r for r in rows if r["mode"] == "dao")
    best = min(r["mse"] for r in const)
    same_init = len({r["init_fingerprint"] for r in rows}) == 1
    ok = same_init and dao["mse"] <= SWEEP_MSE_SLACK * best
    consts = ", ".join(f"{r['w_c']:.2f}:{r['mse']:.5f}" for r in const)
    return CheckResult("sweep", ok, f"dao mse {dao['mse']:.5f} vs best constant {best:.5f} x{SWEEP_MSE_SLACK} "
                                    f"[{consts}], identical init {same_init}")


def check_reproducibility(out_dir, cfg: TrainConfig | None = None) -> CheckResult:
    """Two identical runs give identical CSV bytes; resuming after epoch 1 replays epoch 2 bitwise."""
    t0 = time.perf_counter()
    out = Path(out_dir)
    cfg = cfg or desk_config(epochs=2, synth_n=200, keep_epoch_checkpoints=True)
    a = run(cfg, out / "a")
    b = run(cfg, out / "b")
    same_logs = all((out / "a" / f).read_bytes() == (out / "b" / f).read_bytes()
                    for f in ("steps.csv", "epochs.csv"))
    same_ckpt = a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
    r = run(cfg, out / "resume", resume=out / "a" / "epoch_001.bin")
    expected = [x for x in a.records if x.epoch == 2]

    def bits(rec):
        return [np.float64(v).tobytes() if isinstance(v, float) else v for v in vars(rec).values()]

    same_resume = len(expected) == len(r.records) > 0 and all(bits(x) == bits(y) for x, y in zip(expected, r.records))
    ok = same_logs and same_ckpt and same_resume
    detail = (f"logs identical {same_logs}, checkpoints identical {same_ckpt}, "
              f"resumed epoch-2 records bitwise equal {same_resume} ({len(r.records)} steps)")
    return CheckResult("reproducibility", ok, detail, time.perf_counter() - t0)


def desk_checks(out_dir, echo=print):
    out = Path(out_dir)
    cfg = desk_config()
    rows = run_desk_sweep(out / "sweep", cfg)
    _, val = load_data(cfg)
    dao_row = next(r for r in rows if r["mode"] == "dao")
    results = [check_training(dao_row, val.labels), check_weight_trend(dao_row), check_sweep(rows),
               check_reproducibility(out / "repro")]
    if echo:
        for res in results:
            echo(res.line())
    return results


__all__ = ["desk_config", "run_desk_sweep", "check_training", "check_weight_trend", "check_sweep",
           "check_reproducibility", "desk_checks"]
