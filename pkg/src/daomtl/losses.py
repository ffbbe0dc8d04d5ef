"""Task losses, batch-level imbalance weighting, and the closed-form alpha/beta gradients.

Losses that feed back into the model are built from :mod:`daomtl.tensor`
operations so they stay differentiable; the bookkeeping quantities (class
proportions, gradient-ratio coefficients, analytic gradients) are plain floats
and arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DomainError
from .tensor import Tensor

NUM_CLASSES = 5
NEUTRAL_BAND = 0.049
STRONG_BAND = 0.5
DEGENERATE_NORM = 1e-12


def map_score_to_class(y: float) -> int:
    """Five-way sentiment class of a polarity score (0 strong negative ... 4 strong positive)."""
    y = float(y)
    if math.isnan(y):
        raise DomainError("cannot classify a NaN score")
    if y > STRONG_BAND:
        return 4
    if y > NEUTRAL_BAND:
        return 3
    if y >= -NEUTRAL_BAND:
        return 2
    if y >= -STRONG_BAND:
        return 1
    return 0


def map_scores_to_classes(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if np.any(np.isnan(y)):
        raise DomainError("cannot classify a NaN score")
    # count thresholds crossed; each comparison matches the open/closed side of its band
    return ((y >= -STRONG_BAND).astype(np.int64) + (y >= -NEUTRAL_BAND)
            + (y > NEUTRAL_BAND) + (y > STRONG_BAND))


def mse_loss(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=np.float64)
    if pred.size == 0:
        raise ContractError("mse_loss on an empty batch")
    if pred.shape != target.shape:
        raise ContractError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = T.sub(pred, target)
    return T.mean(T.mul(diff, diff))


def per_sample_ce(logits: Tensor, z) -> Tensor:
    """``-log softmax(logits)[z]`` for every row."""
    return T.neg(T.pick(T.log_softmax(logits), z))


@dataclass
class BatchClassStats:
    counts: np.ndarray
    proportions: np.ndarray
    n_classes: int = NUM_CLASSES

    @property
    def present(self) -> np.ndarray:
        return np.flatnonzero(self.counts)

    @property
    def size(self) -> int:
        return int(self.counts.sum())


def class_stats(z, n_classes: int = NUM_CLASSES) -> BatchClassStats:
    z = np.asarray(z, dtype=np.int64)
    if z.size == 0:
        raise ContractError("class_stats on an empty batch")
    counts = np.bincount(z, minlength=n_classes)
    return BatchClassStats(counts=counts, proportions=counts / z.size, n_classes=n_classes)


def ce_loss_per_class(logits: Tensor, z, n_classes: int = NUM_CLASSES):
    """Mean cross-entropy over the batch and over each class present in it.

    Returns ``(L_c, per_class)`` where ``per_class`` maps class index to the
    mean loss of that class's samples.
    """
    z = np.asarray(z, dtype=np.int64)
    if z.size == 0:
        raise ContractError("ce_loss_per_class on an empty batch")
    ce = per_sample_ce(logits, z)
    per_class = {}
    for k in range(n_classes):
        idx = np.flatnonzero(z == k)
        if idx.size:
            per_class[k] = T.mean(T.take(ce, idx))
    return T.mean(ce), per_class


def class_weights(stats: BatchClassStats, beta: float) -> dict[int, float]:
    """Inverse-power weights ``p_k ** -beta`` for the classes present in the batch."""
    return {int(k): float(stats.proportions[k] ** (-beta)) for k in stats.present}


def imbalanced_loss(stats: BatchClassStats, v: dict, per_class: dict, alpha) -> Tensor:
    """``sum_k v_k (p_k L_ck - alpha log p_k)`` over present classes.

    ``v`` and ``alpha`` may be floats or tensors; tensors make the result
    differentiable in beta/alpha as well as in the logits behind ``per_class``.
    """
    terms = []
    for k in stats.present:
        k = int(k)
        p = float(stats.proportions[k])
        reg = T.scale(alpha, math.log(p)) if isinstance(alpha, Tensor) else alpha * math.log(p)
        terms.append(T.mul(T.sub(T.scale(per_class[k], p), reg), v[k]))
    return T.sum(T.stack(terms))


def class_weight_tensors(stats: BatchClassStats, beta: Tensor) -> dict:
    """Differentiable ``v_k = exp(-beta log p_k)`` for each present class."""
    return {int(k): T.exp(T.scale(beta, -math.log(stats.proportions[k]))) for k in stats.present}


def lambda_coeffs(gnorm_r: float, gnorm_c: float):
    """Gradient-ratio coefficients; each task is scaled by the other task's gradient norm.

    Returns ``(lambda_r, lambda_c, degenerate)``.  When both norms are below
    1e-12 the ratio is undefined and ``(0.5, 0.5, True)`` is returned.
    """
    gnorm_r, gnorm_c = float(gnorm_r), float(gnorm_c)
    if gnorm_r < 0 or gnorm_c < 0 or math.isnan(gnorm_r) or math.isnan(gnorm_c):
        raise DomainError(f"gradient norms must be non-negative, got {gnorm_r}, {gnorm_c}")
    if gnorm_r < DEGENERATE_NORM and gnorm_c < DEGENERATE_NORM:
        return 0.5, 0.5, True
    total = gnorm_r + gnorm_c
    return gnorm_c / total, gnorm_r / total, False


def total_loss(lam_r, lam_c, w_r, w_c, loss_r, loss_imb):
    """``lam_r w_r L_r + lam_c w_c L_imb``; weights and losses may be floats or tensors.

    The gradient-ratio coefficients are always treated as constants.
    """
    if not any(isinstance(x, Tensor) for x in (w_r, w_c, loss_r, loss_imb)):
        return lam_r * w_r * loss_r + lam_c * w_c * loss_imb
    return T.add(T.scale(T.mul(w_r, loss_r), lam_r), T.scale(T.mul(w_c, loss_imb), lam_c))


def alpha_grad(lam_c: float, w_c: float, v: dict, stats: BatchClassStats) -> float:
    """d(total loss)/d(alpha) = ``-lam_c w_c sum_k v_k log p_k``."""
    s = 0.0
    for k in stats.present:
        s += v[int(k)] * math.log(stats.proportions[k])
    return -lam_c * w_c * s


def beta_grad(lam_c: float, w_c: float, stats: BatchClassStats, per_class_values: dict,
              alpha: float, beta: float) -> float:
    """d(total loss)/d(beta) = ``-lam_c w_c sum_k (log p_k / p_k**beta)(p_k L_ck - alpha log p_k)``.

    ``per_class_values`` maps class index to the float value of L_ck.
    """
    s = 0.0
    for k in stats.present:
        p = float(stats.proportions[k])
        lp = math.log(p)
        s += lp * p ** (-beta) * (p * float(per_class_values[int(k)]) - alpha * lp)
    return -lam_c * w_c * s


@dataclass
class LossBundle:
    """Every scalar produced while assembling one multi-task loss."""

    loss_r: float
    loss_c: float
    loss_imb: float
    loss_mtl: float
    lam_r: float
    lam_c: float
    w_r: float
    w_c: float
    alpha: float
    beta: float
    per_class: dict = field(default_factory=dict)
