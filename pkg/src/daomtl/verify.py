"""Oracle checks for the gradient engine, the loss algebra and the metrics.

Each ``check_*`` function returns a :class:`CheckResult`.  They are used by
the ``verify`` CLI subcommand and by the acceptance tests.  The oracles
(central differences, per-sample loops, hand-coded threshold tables) are
written independently of the code paths they check.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import losses as L
from . import tensor as T
from .dao import DaoConfig, DaoNetwork
from .data import batches, synth_generate
from .layers import Dropout, Embedding, Linear, LoraLinear, ParameterStore
from .metrics import classification_metrics
from .model import ModelConfig, SentimentModel
from .optim import Adam

GRAD_TOL = 1e-4
ANALYTIC_TOL = 1e-5
FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name, fn):
    t0 = time.perf_counter()
    passed, detail = fn()
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0)


def rel_err(auto, fd) -> float:
    auto, fd = np.asarray(auto), np.asarray(fd)
    return float(np.linalg.norm(auto - fd) / (np.linalg.norm(fd) + 1e-8))


def grad_check(loss_fn, params, h=FD_STEP) -> float:
    """Worst per-parameter relative error between backward and central differences."""
    for p in params.values():
        p.grad = None
    T.backward(loss_fn())
    auto = {n: (p.grad if p.grad is not None else np.zeros(p.shape)) for n, p in params.items()}
    fd = T.finite_diff(lambda: loss_fn(), params, h)
    return max(rel_err(auto[n], fd[n]) for n in params)


# ---------------------------------------------------------------- gradient cases
def _case_activations(rng):
    x = T.tensor(rng.normal(size=(3, 4)), requires_grad=True, name="x")
    xr = T.tensor(rng.choice([-1, 1], size=(3, 4)) * rng.uniform(0.05, 2.0, size=(3, 4)),
                  requires_grad=True, name="xr")
    xp = T.tensor(rng.uniform(0.2, 3.0, size=(5,)), requires_grad=True, name="xp")
    w1, w2, w3, w4, w5, w6 = (rng.normal(size=s) for s in [(3, 4)] * 5 + [(5,)])

    def f():
        return T.add(T.add(T.add(T.sum(T.scale(T.sigmoid(x), w1)), T.sum(T.scale(T.tanh(x), w2))),
                           T.add(T.sum(T.scale(T.relu(xr), w3)), T.sum(T.scale(T.softmax(x), w4)))),
                     T.add(T.add(T.sum(T.scale(T.log_softmax(x), w5)), T.sum(T.scale(T.log(xp), w6))),
                           T.add(T.l2norm(x), T.mean(T.exp(T.scale(xp, 0.3))))))

    return f, {"x": x, "xr": xr, "xp": xp}


def _case_matmul(rng):
    a = T.tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = T.tensor(rng.normal(size=(4, 2)), requires_grad=True)
    w = rng.normal(size=(3, 2))
    return (lambda: _probe_fixed(T.matmul(a, b), w)), {"a": a, "b": b}


def _probe_fixed(out, w):
    """Fixed random linear functional turning an output tensor into a scalar loss."""
    return T.sum(T.scale(out, w))


def _layer_case(rng, build):
    store = ParameterStore()
    layer, x_shape = build(store, rng)
    x = T.tensor(rng.normal(size=x_shape), requires_grad=True, name="input")
    out0 = layer(x)
    w = rng.normal(size=out0.shape)
    params = {n: p for n, p in store.items() if p.requires_grad}
    params["input"] = x
    return (lambda: _probe_fixed(layer(x), w)), params


def _build_linear(store, rng):
    return Linear(store, "lin", 4, 3, rng), (5, 4)


def _build_lora(store, rng):
    base = Linear(store, "lin", 4, 3, rng)
    layer = LoraLinear(store, base, rank=2, rng=rng, lora_alpha=4.0, dropout_p=0.0)
    layer.V.data[...] = rng.normal(size=layer.V.shape)  # nonzero so U receives gradient too
    return layer, (5, 4)


def _build_dropout(store, rng):
    seed = int(rng.integers(1 << 30))
    drop = Dropout(0.3, np.random.default_rng(seed))

    def layer(x):
        drop.rng = np.random.default_rng(seed)  # same mask on every evaluation
        return drop(x)

    return layer, (4, 6)


def _case_embedding(rng):
    store = ParameterStore()
    emb = Embedding(store, "emb", 7, 3, rng)
    ids = rng.integers(0, 7, size=(4, 5))
    lengths = rng.integers(1, 6, size=4)
    w = rng.normal(size=(4, 3))
    return (lambda: _probe_fixed(emb(ids, lengths), w)), dict(store.items())


def _tiny_model(rng, lora=0):
    cfg = ModelConfig(vocab_size=11, d_embed=4, d_hidden=5, d_mid=3, head_dropout=0.0, lora_rank=lora)
    model = SentimentModel(cfg, seed=int(rng.integers(1 << 30)))
    if lora:
        for layer in (model.encoder.fc1, model.encoder.fc2):
            layer.V.data[...] = rng.normal(scale=0.5, size=layer.V.shape)
            layer.dropout.p = 0.0
    n = 4
    ids = rng.integers(0, 11, size=(n, 6))
    lengths = rng.integers(1, 7, size=n)
    y = rng.uniform(-1, 1, size=n)
    z = rng.integers(0, 5, size=n)
    return model, ids, lengths, y, z


def _case_model_heads(rng):
    model, ids, lengths, y, z = _tiny_model(rng)
    w_s = rng.normal(size=(4,))
    w_l = rng.normal(size=(4, 5))

    def f():
        s, lg = model(ids, lengths)
        return T.add(_probe_fixed(s, w_s), _probe_fixed(lg, w_l))

    return f, {n: p for n, p in model.store.items() if p.requires_grad}


def _case_losses(rng):
    pred = T.tensor(rng.normal(size=6), requires_grad=True, name="pred")
    logits = T.tensor(rng.normal(size=(6, 5)), requires_grad=True, name="logits")
    y = rng.uniform(-1, 1, size=6)
    z = rng.integers(0, 5, size=6)

    def f():
        lc, _ = L.ce_loss_per_class(logits, z)
        return T.add(L.mse_loss(pred, y), lc)

    return f, {"pred": pred, "logits": logits}


def _case_imbalanced_end_to_end(rng):
    model, ids, lengths, y, z = _tiny_model(rng, lora=int(rng.integers(0, 2)) * 2)
    alpha, beta = float(rng.uniform(0, 1)), float(rng.uniform(0, 2))
    alpha_t = T.tensor(alpha, requires_grad=True, name="alpha")
    beta_t = T.tensor(beta, requires_grad=True, name="beta")
    stats = L.class_stats(z)

    def f():
        _, logits = model(ids, lengths)
        _, per_class = L.ce_loss_per_class(logits, z)
        return L.imbalanced_loss(stats, L.class_weight_tensors(stats, beta_t), per_class, alpha_t)

    params = {n: p for n, p in model.store.items() if p.requires_grad}
    params.update(alpha=alpha_t, beta=beta_t)
    return f, params


def _case_total_end_to_end(rng):
    """Full multi-task loss through the model and the DAO network."""
    model, ids, lengths, y, z = _tiny_model(rng)
    dao = DaoNetwork(DaoConfig(hidden=4, fc2_init="xavier", seed=int(rng.integers(1 << 30))))
    # small FC1 weights and positive biases keep ReLU units off the kink and the softmax unsaturated
    dao.fc1.W.data *= 0.1
    dao.fc1.b.data[...] = rng.uniform(0.1, 0.5, size=dao.fc1.b.shape)
    lam_r = float(rng.uniform(0.05, 0.95))
    lam_c = 1.0 - lam_r
    stats = L.class_stats(z)
    alpha, beta = float(rng.uniform(0, 1)), float(rng.uniform(0, 2))
    v = L.class_weights(stats, beta)

    def losses():
        s, logits = model(ids, lengths)
        _, per_class = L.ce_loss_per_class(logits, z)
        return L.mse_loss(s, y), L.imbalanced_loss(stats, v, per_class, alpha)

    # the weight network sees the losses as constants, so freeze its inputs at the base point
    base_r, base_imb = (t.item() for t in losses())

    def f():
        loss_r, loss_imb = losses()
        w = dao(lam_r * base_r, lam_c * base_imb)
        return L.total_loss(lam_r, lam_c, T.take(w, [0]), T.take(w, [1]), loss_r, loss_imb)

    params = {n: p for n, p in model.store.items() if p.requires_grad}
    params.update({n: dao.store[n] for n in dao.fc_names()})
    return f, params


def _gradient_cases():
    return {
        "matmul": _case_matmul,
        "activations+reductions": _case_activations,
        "linear": lambda r: _layer_case(r, _build_linear),
        "lora_linear": lambda r: _layer_case(r, _build_lora),
        "dropout": lambda r: _layer_case(r, _build_dropout),
        "embedding_bag": _case_embedding,
        "encoder+heads": _case_model_heads,
        "mse+ce": _case_losses,
        "imbalanced_loss(e2e)": _case_imbalanced_end_to_end,
        "total_loss(e2e, dao)": _case_total_end_to_end,
    }


def check_gradients(trials=100, seed=0) -> CheckResult:
    def run():
        worst = {}
        for name, build in _gradient_cases().items():
            rng = np.random.default_rng([seed, len(name)])
            errs = []
            for _ in range(trials):
                f, params = build(rng)
                errs.append(grad_check(f, params))
            worst[name] = max(errs)
        bad = {k: v for k, v in worst.items() if not v < GRAD_TOL}
        top = max(worst, key=worst.get)
        return not bad, f"{len(worst)} cases x {trials} trials, worst rel err {worst[top]:.2e} ({top})" + (
            f"; failing {bad}" if bad else "")

    res = _timed("gradient suite vs central differences", run)
    if res.seconds >= 60:
        res.passed = False
        res.detail += "; exceeded 60 s budget"
    return res


# ---------------------------------------------------------------- analytic alpha/beta
def _random_loss_state(rng):
    n = int(rng.integers(1, 11))
    z = rng.integers(0, 5, size=n)
    stats = L.class_stats(z)
    per_class = {int(k): float(rng.uniform(0.01, 3.0)) for k in stats.present}
    lam_r = float(rng.uniform(0.01, 0.99))
    w_r = float(rng.uniform(0.01, 0.99))
    return stats, per_class, lam_r, 1.0 - lam_r, w_r, 1.0 - w_r, float(rng.uniform(0, 2)), \
        float(rng.uniform(0, 3)), float(rng.uniform(0, 1))


def _total_value(stats, per_class, lam_r, lam_c, w_r, w_c, loss_r, alpha, beta):
    v = L.class_weights(stats, beta)
    return L.total_loss(lam_r, lam_c, w_r, w_c, loss_r, L.imbalanced_loss(stats, v, per_class, alpha).item())


def check_alpha_beta(draws=100, seed=1) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        worst_a = worst_b = 0.0
        for _ in range(draws):
            stats, pc, lr_, lc, wr, wc, alpha, beta, loss_r = _random_loss_state(rng)
            fa = lambda a: _total_value(stats, pc, lr_, lc, wr, wc, loss_r, a, beta)
            fb = lambda b: _total_value(stats, pc, lr_, lc, wr, wc, loss_r, alpha, b)
            fd_a = (fa(alpha + FD_STEP) - fa(alpha - FD_STEP)) / (2 * FD_STEP)
            fd_b = (fb(beta + FD_STEP) - fb(beta - FD_STEP)) / (2 * FD_STEP)
            ga = L.alpha_grad(lc, wc, L.class_weights(stats, beta), stats)
            gb = L.beta_grad(lc, wc, stats, pc, alpha, beta)
            worst_a = max(worst_a, rel_err(ga, fd_a))
            worst_b = max(worst_b, rel_err(gb, fd_b))
        ok = worst_a < ANALYTIC_TOL and worst_b < ANALYTIC_TOL
        return ok, f"{draws} draws, worst rel err alpha {worst_a:.2e}, beta {worst_b:.2e}"

    return _timed("closed-form alpha/beta gradients vs central differences", run)


# ---------------------------------------------------------------- simplex
def check_simplex(n=10_000, seed=2) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        ok = True
        nets = [DaoNetwork(DaoConfig(fc2_init="xavier", seed=s)) for s in range(10)]
        for i in range(n):
            gr, gc = 10.0 ** rng.uniform(-6, 6, size=2)
            lr_, lc, _ = L.lambda_coeffs(gr, gc)
            w = nets[i % 10](float(rng.uniform(0, 5)), float(rng.uniform(0, 5))).data
            worst = max(worst, abs(lr_ + lc - 1.0), abs(w.sum() - 1.0))
            ok &= 0 < lr_ < 1 and 0 < lc < 1 and bool(np.all((w > 0) & (w < 1)))
        return ok and worst <= 1e-12, f"{n} inputs, worst |sum - 1| = {worst:.1e}"

    return _timed("simplex invariants (lambda, w)", run)


# ---------------------------------------------------------------- score mapping
BOUNDARY_POINTS = (0.6, 0.5, 0.049, -0.049, -0.5, -0.51)
BOUNDARY_CLASSES = (4, 3, 2, 2, 1, 0)


def piecewise_oracle(y: float) -> int:
    """Table of (lower, lower_inclusive, upper, upper_inclusive, class), scanned linearly."""
    table = [(-math.inf, False, -0.5, False, 0), (-0.5, True, -0.049, False, 1), (-0.049, True, 0.049, True, 2),
             (0.049, False, 0.5, True, 3), (0.5, False, math.inf, False, 4)]
    hits = [c for lo, lo_in, hi, hi_in, c in table
            if (y > lo or (lo_in and y == lo)) and (y < hi or (hi_in and y == hi))]
    assert len(hits) == 1
    return hits[0]


def check_score_mapping(points=100_000) -> CheckResult:
    def run():
        grid = np.concatenate([np.linspace(-1.0, 1.0, points), BOUNDARY_POINTS])
        expected = np.array([piecewise_oracle(float(y)) for y in grid])
        vec = L.map_scores_to_classes(grid)
        scalar = np.array([L.map_score_to_class(float(y)) for y in grid])
        boundary_ok = [L.map_score_to_class(y) for y in BOUNDARY_POINTS] == list(BOUNDARY_CLASSES)
        mism = int(np.sum(vec != expected) + np.sum(scalar != expected))
        return mism == 0 and boundary_ok, f"{grid.size} points, {mism} mismatches, boundary table ok={boundary_ok}"

    return _timed("score-to-class mapping vs piecewise oracle", run)


# ---------------------------------------------------------------- imbalance loss
def naive_imbalanced_loss(logits, z, alpha, beta):
    """Per-sample loop: accumulate each sample's CE into its class, then apply the weights."""
    n = len(z)
    sums, counts = {}, {}
    for i in range(n):
        row = logits[i]
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        sums[int(z[i])] = sums.get(int(z[i]), 0.0) + (lse - row[z[i]])
        counts[int(z[i])] = counts.get(int(z[i]), 0) + 1
    total = 0.0
    for k in sorted(counts):
        p = counts[k] / n
        total += (1.0 / p ** beta) * (p * sums[k] / counts[k] - alpha * math.log(p))
    return total


def check_imbalance_reductions(batches_=200, seed=3) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        worst_red = worst_naive = 0.0
        for _ in range(batches_):
            n = int(rng.integers(1, 16))
            logits = T.tensor(rng.normal(scale=2.0, size=(n, 5)))
            z = rng.integers(0, 5, size=n)
            stats = L.class_stats(z)
            lc, per_class = L.ce_loss_per_class(logits, z)
            zero = L.imbalanced_loss(stats, L.class_weights(stats, 0.0), per_class, 0.0).item()
            worst_red = max(worst_red, abs(zero - lc.item()))
            alpha, beta = float(rng.uniform(0, 2)), float(rng.uniform(0, 3))
            val = L.imbalanced_loss(stats, L.class_weights(stats, beta), per_class, alpha).item()
            ref = naive_imbalanced_loss(logits.data.tolist(), z, alpha, beta)
            worst_naive = max(worst_naive, abs(val - ref) / max(1.0, abs(ref)))
        ok = worst_red <= 1e-12 and worst_naive <= 1e-10
        return ok, f"{batches_} batches, |L_imb(0,0) - L_c| <= {worst_red:.1e}, vs naive loop {worst_naive:.1e}"

    return _timed("imbalance-loss reductions", run)


# ---------------------------------------------------------------- weighted recall
def check_weighted_recall(matrices=500, seed=4) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        bad = 0
        for _ in range(matrices):
            k = int(rng.integers(2, 8))
            cm = rng.integers(0, 20, size=(k, k)) * (rng.random((k, k)) < 0.7)
            if cm.sum() == 0:
                cm[0, 0] = 1
            acc, _, wr, _ = classification_metrics(cm)
            bad += acc != wr
        return bad == 0, f"{matrices} matrices, {bad} with weighted recall != accuracy"

    return _timed("weighted recall == accuracy", run)


# ---------------------------------------------------------------- LoRA
def check_lora(steps=100, seed=5) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        notes, ok = [], True
        # zero-delta at initialisation
        store = ParameterStore()
        base = Linear(store, "base", 16, 8, rng)
        x = T.tensor(rng.normal(size=(32, 16)))
        ref = base(x).data.copy()
        delta = 0.0
        for r in (8, 16, 32, 64, 128, 256, 384, 512):
            s = ParameterStore()
            b = Linear(s, "base", 16, 8, rng)
            b.W.data[...] = base.W.data
            b.b.data[...] = base.b.data
            lora = LoraLinear(s, b, r, rng).eval()
            delta = max(delta, float(np.max(np.abs(lora(x).data - ref))))
            count = s.num_parameters(trainable_only=True)
            ok &= count == r * (16 + 8) == lora.num_adapter_parameters()
        ok &= delta < 1e-12
        notes.append(f"max zero-delta {delta:.1e}, counts r*(d_out+d_in) ok={ok}")
        # frozen base is bitwise unchanged by training
        model = SentimentModel(ModelConfig(vocab_size=512, d_embed=16, d_hidden=16, d_mid=8, lora_rank=4), seed=seed)
        frozen = {n: p.data.copy() for n, p in model.store.items() if not p.requires_grad}
        opt = Adam(lr=1e-2, weight_decay=0.01, variant="adamw")
        corpus = synth_generate(200, seed=seed)
        it = iter(())
        for step in range(steps):
            b = next(it, None)
            if b is None:
                it = batches(corpus, 10, seed=seed, epoch=step, vocab_size=512)
                b = next(it)
            s, lg = model(b.ids, b.lengths)
            lc, _ = L.ce_loss_per_class(lg, b.z)
            model.store.zero_grad()
            T.backward(T.add(L.mse_loss(s, b.y), lc))
            opt.step(model.store, T.gradient_map(model.store))
        unchanged = all(np.array_equal(model.store[n].data, a) for n, a in frozen.items())
        moved = not np.array_equal(model.encoder.fc1.V.data, 0.0)
        ok &= unchanged and moved
        notes.append(f"{len(frozen)} frozen tensors bitwise unchanged after {steps} steps={unchanged}")
        return ok, "; ".join(notes)

    return _timed("LoRA zero-delta / parameter count / frozen base", run)


FAST_CHECKS = (check_gradients, check_alpha_beta, check_simplex, check_score_mapping,
               check_imbalance_reductions, check_weighted_recall, check_lora)


def run_all(checks=FAST_CHECKS, echo=print):
    results = []
    for check in checks:
        res = check()
        results.append(res)
        if echo:
            echo(res.line())
    return results
