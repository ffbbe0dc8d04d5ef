"""Toy text encoder with the regression and classification heads on top."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .layers import Dropout, Embedding, Linear, LoraLinear, Module, ParameterStore

NUM_CLASSES = 5


@dataclass
class ModelConfig:
    vocab_size: int = 32768
    d_embed: int = 64
    d_hidden: int = 64
    d_mid: int = 32
    n_classes: int = NUM_CLASSES
    head_dropout: float = 0.1
    lora_rank: int = 0
    lora_alpha: float | None = None
    zero_init_heads: bool = False


class Encoder(Module):
    """Hashed-token embedding, masked mean pooling, then ``L2(tanh(L1(.)))``."""

    def __init__(self, store, cfg: ModelConfig, rng, dropout_rngs):
        self.embed = Embedding(store, "backbone.embed", cfg.vocab_size, cfg.d_embed, rng)
        self.fc1 = Linear(store, "backbone.fc1", cfg.d_embed, cfg.d_hidden, rng)
        self.fc2 = Linear(store, "backbone.fc2", cfg.d_hidden, cfg.d_hidden, rng)
        self.d_hidden = cfg.d_hidden
        if cfg.lora_rank:
            store.set_trainable("backbone.*", False)
            self.fc1 = LoraLinear(store, self.fc1, cfg.lora_rank, rng, cfg.lora_alpha,
                                  dropout_rng=dropout_rngs["lora1"])
            self.fc2 = LoraLinear(store, self.fc2, cfg.lora_rank, rng, cfg.lora_alpha,
                                  dropout_rng=dropout_rngs["lora2"])

    def __call__(self, ids, lengths):
        pooled = self.embed(ids, lengths)
        return self.fc2(T.tanh(self.fc1(pooled)))


class RegressionHead(Module):
    """Score per sample: ``LL2(sigmoid(LL1(H)))``, left unbounded."""

    def __init__(self, store, d_in, d_mid, rng, zero_init=False):
        self.ll1 = Linear(store, "reg_head.ll1", d_in, d_mid, rng)
        self.ll2 = Linear(store, "reg_head.ll2", d_mid, 1, rng, init="zeros" if zero_init else "xavier")

    def __call__(self, h):
        return self.ll2(T.sigmoid(self.ll1(h)))


class ClassificationHead(Module):
    """Logits per sample: ``LL2(DP2(tanh(LL1(DP1(H)))))``."""

    def __init__(self, store, d_in, d_mid, n_classes, rng, p, dropout_rngs, zero_init=False):
        self.dp1 = Dropout(p, dropout_rngs["cls_dp1"])
        self.ll1 = Linear(store, "cls_head.ll1", d_in, d_mid, rng)
        self.dp2 = Dropout(p, dropout_rngs["cls_dp2"])
        self.ll2 = Linear(store, "cls_head.ll2", d_mid, n_classes, rng,
                          init="zeros" if zero_init else "xavier")

    def __call__(self, h):
        return self.ll2(self.dp2(T.tanh(self.ll1(self.dp1(h)))))


_STREAMS = ("cls_dp1", "cls_dp2", "lora1", "lora2")


class SentimentModel(Module):
    """Shared encoder feeding a polarity regressor and a five-way classifier.

    All randomness (initialisation and every dropout mask stream) derives
    from ``seed``.
    """

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 42):
        self.cfg = cfg = cfg or ModelConfig()
        self.store = ParameterStore()
        seq = np.random.SeedSequence(seed)
        init_seq, *stream_seqs = seq.spawn(1 + len(_STREAMS))
        rng = np.random.default_rng(init_seq)
        self.dropout_rngs = {k: np.random.default_rng(s) for k, s in zip(_STREAMS, stream_seqs)}
        self.encoder = Encoder(self.store, cfg, rng, self.dropout_rngs)
        self.reg_head = RegressionHead(self.store, cfg.d_hidden, cfg.d_mid, rng, cfg.zero_init_heads)
        self.cls_head = ClassificationHead(self.store, cfg.d_hidden, cfg.d_mid, cfg.n_classes, rng,
                                           cfg.head_dropout, self.dropout_rngs, cfg.zero_init_heads)

    def encode(self, ids, lengths):
        return self.encoder(ids, lengths)

    def regress(self, h):
        if h.shape[1] != self.cfg.d_hidden:
            raise DimensionError(f"hidden width {h.shape[1]} != {self.cfg.d_hidden}")
        return self.reg_head(h)

    def classify(self, h):
        if h.shape[1] != self.cfg.d_hidden:
            raise DimensionError(f"hidden width {h.shape[1]} != {self.cfg.d_hidden}")
        return self.cls_head(h)

    def __call__(self, ids, lengths):
        """Return ``(scores (n,), logits (n, K))`` for a padded id matrix."""
        h = self.encode(ids, lengths)
        scores = T.reshape(self.regress(h), (h.shape[0],))
        return scores, self.classify(h)

    def trunk_names(self):
        return [n for n in self.store.names(trainable=True) if n.startswith("backbone.")]

    def rng_states(self):
        return {k: r.bit_generator.state for k, r in self.dropout_rngs.items()}

    def set_rng_states(self, states):
        for k, st in states.items():
            self.dropout_rngs[k].bit_generator.state = st
