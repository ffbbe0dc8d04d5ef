"""scikit-learn style wrapper around :class:`~daomtl.trainer.Trainer`."""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .config import TrainConfig
from .data import Corpus, Example, batches
from .errors import ContractError, DimensionError, DomainError
from .losses import map_scores_to_classes
from .tensor import softmax
from .trainer import Trainer


def check_texts(X) -> list[str]:
    """Coerce ``X`` to a non-empty list of strings."""
    if isinstance(X, str):
        raise DimensionError("expected a sequence of texts, got a single string")
    texts = list(X)
    if not texts:
        raise DimensionError("expected at least one text")
    bad = [i for i, t in enumerate(texts) if not isinstance(t, str)]
    if bad:
        raise ContractError(f"non-string entries at positions {bad[:5]}")
    return texts


def check_scores(y, n: int) -> np.ndarray:
    """Polarity targets: finite floats in [-1, 1], one per text."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != n:
        raise DimensionError(f"expected {n} scores, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise DomainError("scores must be finite")
    if np.any(np.abs(y) > 1.0):
        raise DomainError("scores must lie in [-1, 1]")
    return y


def _check_fitted(est):
    if getattr(est, "trainer_", None) is None:
        raise ContractError(f"{type(est).__name__} is not fitted; call fit first")


class DAOSentimentRegressor(RegressorMixin, BaseEstimator):
    """Joint polarity regressor and five-class classifier trained with adaptive task weights.

    ``predict`` returns continuous scores, ``predict_class`` the arg-max class,
    ``transform`` the pooled encoder features.  ``mode`` selects the DAO
    weighting, fixed weights (``w_c`` with ``w_r = 1 - w_c``) or regression only.
    """

    def __init__(self, mode="dao", w_c=0.1, epochs=20, batch_size=10, base_lr=1e-4, vocab_size=4096,
                 lora_rank=0, max_len=512, seed=42):
        self.mode = mode
        self.w_c = w_c
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.vocab_size = vocab_size
        self.lora_rank = lora_rank
        self.max_len = max_len
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(mode=self.mode.replace("-", "_"), w_c=self.w_c, w_r=1.0 - self.w_c, epochs=self.epochs,
                           batch_size=self.batch_size, base_lr=self.base_lr, vocab_size=self.vocab_size,
                           lora_rank=self.lora_rank, max_len=self.max_len, seed=self.seed).validate()

    def fit(self, X, y):
        texts = check_texts(X)
        y = check_scores(y, len(texts))
        cfg = self._config()
        corpus = Corpus([Example(t, float(s)) for t, s in zip(texts, y)], provenance="fit")
        steps = math.ceil(len(corpus) / cfg.batch_size)
        self.trainer_ = Trainer(cfg, steps)
        self.step_records_ = []
        for epoch in range(1, cfg.epochs + 1):
            for i, b in enumerate(batches(corpus, cfg.batch_size, seed=cfg.seed, epoch=epoch,
                                          vocab_size=cfg.vocab_size, max_len=cfg.max_len)):
                self.step_records_.append(self.trainer_.train_step(b, epoch, i))
            self.trainer_.epoch = epoch
        self.n_features_out_ = cfg.d_hidden
        return self

    def _corpus(self, X):
        # scores are unused at inference; zero keeps Example happy
        return Corpus([Example(t, 0.0) for t in check_texts(X)], provenance="predict")

    def _outputs(self, X):
        _check_fitted(self)
        return self.trainer_.predict(self._corpus(X))

    def predict(self, X) -> np.ndarray:
        return self._outputs(X)[0]

    def predict_class(self, X) -> np.ndarray:
        return np.argmax(self._outputs(X)[1], axis=1)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self._outputs(X)[1]).data

    def score_classes(self, X) -> np.ndarray:
        """Classes implied by the regressed scores via the fixed thresholds."""
        return map_scores_to_classes(self.predict(X))

    def transform(self, X) -> np.ndarray:
        _check_fitted(self)
        tr = self.trainer_
        tr.model.eval()
        out = []
        try:
            for b in batches(self._corpus(X), 256, shuffle=False, vocab_size=tr.cfg.vocab_size,
                             max_len=tr.cfg.max_len):
                out.append(tr.model.encode(b.ids, b.lengths).data)
        finally:
            tr.model.train()
        return np.concatenate(out)

    def fit_transform(self, X, y):
        return self.fit(X, y).transform(X)


__all__ = ["DAOSentimentRegressor", "check_texts", "check_scores"]
