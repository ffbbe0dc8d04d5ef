"""Regression and classification metrics for the two sentiment tasks."""
from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError


@dataclass
class MetricReport:
    mse: float
    mae: float
    rmse: float
    r2: float
    acc: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    r2_defined: bool = True

    def as_record(self) -> dict:
        """Flat key/value view used by the CLI and the epoch log."""
        return asdict(self)


def regression_metrics(pred, target):
    """Return ``(mse, mae, rmse, r2)``.

    R^2 is undefined when the targets are constant; it is then reported as
    NaN and the caller should consult :func:`r2_defined`.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.size == 0:
        raise ContractError(f"need equal non-empty arrays, got {pred.shape} and {target.shape}")
    err = target - pred
    sse = float(np.sum(err * err))
    mse = sse / pred.size
    mae = float(np.mean(np.abs(err)))
    sst = float(np.sum((target - target.mean()) ** 2))
    r2 = 1.0 - sse / sst if sst > 0 else math.nan
    return mse, mae, math.sqrt(mse), r2


def confusion_matrix(true, pred, n_classes=5) -> np.ndarray:
    """Counts with rows indexed by the true class and columns by the prediction."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def per_class_scores(cm):
    """Per-class precision, recall, F1 and support; zero when a denominator is zero."""
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1, support


def classification_metrics(cm):
    """Return ``(acc, weighted_precision, weighted_recall, weighted_f1)`` from a confusion matrix."""
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or total <= 0:
        raise ContractError("classification metrics need a non-empty square confusion matrix")
    tp = np.diag(cm)
    acc = int(tp.sum()) / total
    precision, _, f1, support = per_class_scores(cm)
    # rational arithmetic keeps support-weighted recall exactly equal to accuracy
    w_recall = float(sum((Fraction(int(t), int(s)) * int(s) for t, s in zip(tp, support) if s > 0),
                         Fraction(0)) / total)
    w_precision = float(np.dot(precision, support)) / total
    w_f1 = float(np.dot(f1, support)) / total
    return acc, w_precision, w_recall, w_f1


def report(pred_scores, true_scores, pred_classes, true_classes, n_classes=5) -> MetricReport:
    mse, mae, rmse, r2 = regression_metrics(pred_scores, true_scores)
    acc, wp, wr, wf1 = classification_metrics(confusion_matrix(true_classes, pred_classes, n_classes))
    return MetricReport(mse=mse, mae=mae, rmse=rmse, r2=r2, acc=acc, weighted_precision=wp,
                        weighted_recall=wr, weighted_f1=wf1, r2_defined=not math.isnan(r2))
