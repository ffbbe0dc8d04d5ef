"""The task-weighting network and its learnable imbalance scalars alpha and beta."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import FormatError, NumericError
from .layers import Linear, Module, ParameterStore
from .optim import Adam
from .tensor import Tensor

SNAPSHOT_VERSION = 1


@dataclass
class DaoConfig:
    hidden: int = 16
    lr: float = 1e-3
    alpha_init: float = 0.1
    beta_init: float = 1.0
    alpha_bounds: tuple = (0.0, 10.0)
    beta_bounds: tuple = (0.0, 5.0)
    fc2_init: str = "zeros"
    seed: int = 42


class DaoNetwork(Module):
    """Maps ``[lam_r L_r, lam_c L_imb]`` to softmax task weights ``(w_r, w_c)``.

    FC1 (2 -> hidden) with ReLU, FC2 (hidden -> 2), softmax.  The network owns
    alpha and beta and one Adam optimizer covering all of its parameters.
    """

    def __init__(self, cfg: DaoConfig | None = None):
        self.cfg = cfg = cfg or DaoConfig()
        self.store = ParameterStore()
        rng = np.random.default_rng(cfg.seed)
        self.fc1 = Linear(self.store, "dao.fc1", 2, cfg.hidden, rng)
        self.fc2 = Linear(self.store, "dao.fc2", cfg.hidden, 2, rng, init=cfg.fc2_init)
        self.alpha = self.store.add("dao.alpha", cfg.alpha_init)
        self.beta = self.store.add("dao.beta", cfg.beta_init)
        self.optimizer = Adam(lr=cfg.lr, variant="adam")

    @property
    def alpha_value(self) -> float:
        return float(self.alpha.data)

    @property
    def beta_value(self) -> float:
        return float(self.beta.data)

    def forward(self, weighted_r, weighted_c) -> Tensor:
        """Return the length-2 weight vector for the two (already lambda-scaled) losses."""
        vals = [float(x.item()) if isinstance(x, Tensor) else float(x) for x in (weighted_r, weighted_c)]
        if not all(math.isfinite(v) for v in vals):
            raise NumericError(f"non-finite DAO inputs {vals}")
        x = Tensor(np.array([vals]))
        s = self.fc2(T.relu(self.fc1(x)))
        return T.softmax(T.reshape(s, (2,)))

    __call__ = forward

    def fc_names(self):
        return [n for n in self.store if n.startswith("dao.fc")]

    def step(self, fc_grads: dict, d_alpha: float, d_beta: float):
        """One Adam update of FC1/FC2/alpha/beta, then clamp alpha and beta to their bounds."""
        grads = {n: fc_grads[n] for n in self.fc_names()}
        grads["dao.alpha"] = np.array(float(d_alpha))
        grads["dao.beta"] = np.array(float(d_beta))
        self.optimizer.step(self.store, grads)
        lo, hi = self.cfg.alpha_bounds
        self.alpha.data[...] = min(max(self.alpha_value, lo), hi)
        lo, hi = self.cfg.beta_bounds
        self.beta.data[...] = min(max(self.beta_value, lo), hi)

    def snapshot(self) -> dict:
        meta, arrays = self.optimizer.state()
        return {
            "version": SNAPSHOT_VERSION,
            "config": {"hidden": self.cfg.hidden, "lr": self.cfg.lr,
                       "alpha_bounds": list(self.cfg.alpha_bounds),
                       "beta_bounds": list(self.cfg.beta_bounds)},
            "params": {n: _encode(p.data) for n, p in self.store.items()},
            "optimizer": {"meta": meta, "arrays": {k: _encode(a) for k, a in arrays.items()}},
        }

    @classmethod
    def from_snapshot(cls, record: dict) -> "DaoNetwork":
        try:
            if record.get("version") != SNAPSHOT_VERSION:
                raise FormatError(f"unsupported DAO snapshot version {record.get('version')!r}")
            c = record["config"]
            net = cls(DaoConfig(hidden=int(c["hidden"]), lr=float(c["lr"]),
                                alpha_bounds=tuple(c["alpha_bounds"]), beta_bounds=tuple(c["beta_bounds"])))
            for name, enc in record["params"].items():
                arr = _decode(enc)
                if arr.shape != net.store[name].shape:
                    raise FormatError(f"shape mismatch for {name}")
                net.store[name].data[...] = arr
            opt = record["optimizer"]
            net.optimizer.load_state(opt["meta"], {k: _decode(v) for k, v in opt["arrays"].items()})
        except FormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"corrupt DAO snapshot: {exc}") from exc
        return net


def dao_snapshot(net: DaoNetwork) -> dict:
    return net.snapshot()


def _encode(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}


def _decode(enc):
    return np.array(enc["data"], dtype=np.float64).reshape(enc["shape"])
