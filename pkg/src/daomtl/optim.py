"""Adam / AdamW and the warmup-then-cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError


class Adam:
    """Bias-corrected Adam over named parameters.

    With ``variant="adamw"`` weight decay is decoupled: every trainable tensor
    with two or more dimensions is shrunk by ``lr * weight_decay * p`` before
    the adaptive step.  Vectors and scalars (biases, alpha, beta) never decay.
    With ``variant="adam"`` a nonzero weight decay is folded into the gradient
    of the same tensors instead.
    """

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0, variant="adam"):
        if variant not in ("adam", "adamw"):
            raise ConfigError(f"unknown optimizer variant {variant!r}")
        if lr < 0 or eps <= 0 or weight_decay < 0:
            raise ConfigError("learning rate, eps and weight decay must be non-negative")
        self.lr = lr
        self.beta1, self.beta2 = beta1, beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.variant = variant
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads: dict, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            if not p.requires_grad:
                continue
            if name not in grads:
                raise ContractError(f"no gradient supplied for trainable parameter {name!r}")
            g = np.asarray(grads[name], dtype=np.float64)
            if g.shape != p.shape:
                raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
            decays = self.weight_decay > 0 and p.ndim >= 2
            if decays and self.variant == "adam":
                g = g + self.weight_decay * p.data
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros(p.shape)
                self.v[name] = np.zeros(p.shape)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if decays and self.variant == "adamw":
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        """Return ``(meta, arrays)`` fully describing the optimizer."""
        meta = {"t": self.t, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "weight_decay": self.weight_decay, "variant": self.variant}
        arrays = {}
        for name in self.m:
            arrays[f"m/{name}"] = self.m[name]
            arrays[f"v/{name}"] = self.v[name]
        return meta, arrays

    def load_state(self, meta, arrays):
        self.t = int(meta["t"])
        self.m, self.v = {}, {}
        for key, arr in arrays.items():
            slot, name = key.split("/", 1)
            (self.m if slot == "m" else self.v)[name] = np.array(arr, dtype=np.float64)


@dataclass
class CosineSchedule:
    """Linear warmup to ``base_lr`` followed by a half-cosine decay to zero."""

    base_lr: float
    total_steps: int
    warmup_steps: int = 100

    def __call__(self, step: int) -> float:
        return lr_at(self, step)


def lr_at(schedule: CosineSchedule, step: int) -> float:
    if step > schedule.total_steps or step < 0:
        return 0.0
    warm = schedule.warmup_steps
    if step < warm:
        return schedule.base_lr * step / warm
    span = schedule.total_steps - warm
    if span <= 0:
        return schedule.base_lr
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * (step - warm) / span))
