"""Parameter storage and the trainable layers used by the model and the DAO network."""
from __future__ import annotations

import fnmatch
from collections import OrderedDict

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

LORA_DROPOUT = 0.05


class ParameterStore:
    """Insertion-ordered mapping of unique names to parameter tensors.

    A parameter is trainable when its tensor has ``requires_grad`` set; the
    flag is toggled through :meth:`set_trainable`.
    """

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.name = name
        t.requires_grad = trainable
        self._params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, trainable=None):
        return [n for n, p in self._params.items() if trainable is None or p.requires_grad == trainable]

    def trainable_items(self):
        return [(n, p) for n, p in self._params.items() if p.requires_grad]

    def is_trainable(self, name) -> bool:
        return self._params[name].requires_grad

    def num_parameters(self, trainable_only=False) -> int:
        return int(sum(p.size for p in self._params.values() if p.requires_grad or not trainable_only))

    def set_trainable(self, pattern: str, flag: bool) -> int:
        """Set the trainable flag on every name matching a glob pattern; returns how many matched."""
        count = 0
        for name, p in self._params.items():
            if fnmatch.fnmatchcase(name, pattern):
                p.requires_grad = bool(flag)
                count += 1
        return count

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def state_arrays(self):
        return OrderedDict((n, p.data) for n, p in self._params.items())


def set_trainable(store: ParameterStore, pattern: str, flag: bool) -> int:
    return store.set_trainable(pattern, flag)


def xavier_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class Module:
    """Minimal container giving layers a shared train/eval switch."""

    training = True

    def children(self):
        return [v for v in vars(self).values() if isinstance(v, Module)]

    def train(self, mode=True):
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)


class Linear(Module):
    """Affine map ``x @ W.T + b`` with W stored as (out, in)."""

    def __init__(self, store: ParameterStore, name: str, d_in: int, d_out: int, rng,
                 init="xavier", trainable=True):
        self.name = name
        self.d_in, self.d_out = d_in, d_out
        if init == "xavier":
            w = xavier_uniform(rng, d_out, d_in)
        elif init == "zeros":
            w = np.zeros((d_out, d_in))
        else:
            raise ConfigError(f"unknown init {init!r}")
        self.W = store.add(f"{name}.W", w, trainable)
        self.b = store.add(f"{name}.b", np.zeros(d_out), trainable)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise DimensionError(f"{self.name}: expected input (*, {self.d_in}), got {x.shape}")
        return T.add_bias(T.matmul(x, T.transpose(self.W)), self.b)


class Dropout(Module):
    """Inverted dropout drawing masks from its own seeded generator."""

    def __init__(self, p: float, rng: np.random.Generator):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.p == 0.0:
            return x
        keep = self.rng.random(x.shape) >= self.p
        return T.scale(x, keep / (1.0 - self.p))


class LoraLinear(Module):
    """Frozen linear layer plus a trainable low-rank update ``scale * U @ V``.

    U is (d_out, r) drawn from N(0, 0.02^2) and V is (r, d_in) zeros, so the
    wrapped layer initially computes exactly the base function.  The bias
    stays frozen with the base weights.
    """

    def __init__(self, store: ParameterStore, base: Linear, rank: int, rng,
                 lora_alpha: float | None = None, dropout_p: float = LORA_DROPOUT,
                 dropout_rng=None):
        if rank < 1:
            raise ConfigError(f"LoRA rank must be >= 1, got {rank}")
        self.base = base
        self.rank = rank
        self.lora_alpha = float(rank if lora_alpha is None else lora_alpha)
        self.scale = self.lora_alpha / rank
        store.set_trainable(f"{base.name}.W", False)
        store.set_trainable(f"{base.name}.b", False)
        self.U = store.add(f"{base.name}.lora_U", rng.normal(0.0, 0.02, size=(base.d_out, rank)))
        self.V = store.add(f"{base.name}.lora_V", np.zeros((rank, base.d_in)))
        self.dropout = Dropout(dropout_p, dropout_rng if dropout_rng is not None else rng)

    @property
    def name(self):
        return self.base.name

    @property
    def d_in(self):
        return self.base.d_in

    @property
    def d_out(self):
        return self.base.d_out

    def num_adapter_parameters(self) -> int:
        return self.rank * (self.base.d_out + self.base.d_in)

    def __call__(self, x: Tensor) -> Tensor:
        out = self.base(x)
        low = T.matmul(T.matmul(self.dropout(x), T.transpose(self.V)), T.transpose(self.U))
        if self.scale != 1.0:
            low = T.scale(low, self.scale)
        return T.add(out, low)


class Embedding(Module):
    """Token embedding table pooled by masked mean."""

    def __init__(self, store: ParameterStore, name: str, vocab_size: int, dim: int, rng, trainable=True):
        self.vocab_size, self.dim = vocab_size, dim
        self.table = store.add(f"{name}.table", rng.normal(0.0, 1.0 / np.sqrt(dim), size=(vocab_size, dim)),
                               trainable)

    def __call__(self, ids, lengths) -> Tensor:
        return T.embedding_bag(self.table, ids, lengths)
