"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Tensor` remembering its parents and a
closure mapping the output gradient to one gradient per parent.  Graphs are
built fresh on every forward pass; :func:`backward` walks one in reverse
topological order and accumulates into the ``grad`` slot of leaf tensors that
have ``requires_grad`` set.

Broadcasting is limited to a single-element operand against a tensor of any
shape, plus the dedicated row-wise :func:`add_bias`.
"""
from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NumericError

__all__ = [
    "Tensor",
    "tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "log",
    "exp",
    "sigmoid",
    "tanh",
    "relu",
    "softmax",
    "log_softmax",
    "sum",
    "mean",
    "l2norm",
    "add_bias",
    "transpose",
    "reshape",
    "take",
    "pick",
    "stack",
    "embedding_bag",
    "backward",
    "finite_diff",
    "grad_norm",
]

DTYPE = np.float64


class Tensor:
    """n-dimensional real array that may participate in a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")
    __array_priority__ = 1000  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None, _op=""):
        # op outputs own fresh arrays already; leaves copy to avoid aliasing caller data
        self.data = np.asarray(data, dtype=DTYPE) if _op else np.array(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, op={self._op or 'leaf'!r})"

    def __len__(self):
        return self.data.shape[0]

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


def _wrap(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data, parents, backward_fn, op):
    needs = any(p.requires_grad for p in parents)
    return Tensor(np.asarray(data, dtype=DTYPE), requires_grad=needs,
                  _parents=tuple(parents) if needs else (),
                  _backward=backward_fn if needs else None, _op=op)


def _broadcast_pair(a, b, op):
    if a.shape == b.shape:
        return
    if a.size == 1 or b.size == 1:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    return np.full(shape, g.sum(), dtype=DTYPE) if int(np.prod(shape)) == 1 else g.reshape(shape)


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    _broadcast_pair(a, b, "add")

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    _broadcast_pair(a, b, "sub")

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    _broadcast_pair(a, b, "mul")

    def bw(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw, "mul")


def scale(a, c):
    """Multiply by a constant that does not participate in differentiation."""
    a = _wrap(a)
    c = np.asarray(c, dtype=DTYPE)
    if c.size != 1 and c.shape != a.shape:
        raise DimensionError(f"scale: incompatible shapes {a.shape} and {c.shape}")

    def bw(g):
        return (g * c,)

    return _result(a.data * c, (a,), bw, "scale")


def neg(a):
    a = _wrap(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def log(a):
    a = _wrap(a)
    if np.any(np.isnan(a.data)) or np.any(a.data <= 0):
        raise DomainError("log: input must be strictly positive")

    def bw(g):
        return (g / a.data,)

    return _result(np.log(a.data), (a,), bw, "log")


def exp(a):
    a = _wrap(a)
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _result(out, (a,), bw, "exp")


# ---------------------------------------------------------------- activations

def sigmoid(a):
    a = _wrap(a)
    # split by sign so neither branch overflows
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _result(out, (a,), bw, "sigmoid")


def tanh(a):
    a = _wrap(a)
    out = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return _result(out, (a,), bw, "tanh")


def relu(a):
    a = _wrap(a)
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _result(a.data * mask, (a,), bw, "relu")


def _check_finite(x, op):
    if np.any(np.isnan(x)):
        raise NumericError(f"{op}: NaN input")


def softmax(a):
    """Softmax over the last axis, max-shifted for stability."""
    a = _wrap(a)
    _check_finite(a.data, "softmax")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _result(out, (a,), bw, "softmax")


def log_softmax(a):
    a = _wrap(a)
    _check_finite(a.data, "log_softmax")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def bw(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _result(out, (a,), bw, "log_softmax")


# ---------------------------------------------------------------- reductions

def sum(a):  # noqa: A001 - mirrors the numpy name on purpose
    a = _wrap(a)

    def bw(g):
        return (np.full(a.shape, float(g), dtype=DTYPE),)

    return _result(a.data.sum(), (a,), bw, "sum")


def mean(a):
    a = _wrap(a)
    if a.size == 0:
        raise ContractError("mean of an empty tensor")
    n = a.size

    def bw(g):
        return (np.full(a.shape, float(g) / n, dtype=DTYPE),)

    return _result(a.data.sum() / n, (a,), bw, "mean")


def l2norm(a):
    """Euclidean norm of all entries.  The gradient at the zero vector is zero."""
    a = _wrap(a)
    norm = float(np.sqrt(np.sum(a.data * a.data)))

    def bw(g):
        if norm == 0.0:
            return (np.zeros(a.shape, dtype=DTYPE),)
        return (float(g) * a.data / norm,)

    return _result(norm, (a,), bw, "l2norm")


# ---------------------------------------------------------------- structure

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), bw, "matmul")


def add_bias(x, b):
    """Add a length-n vector to every row of an (m, n) matrix."""
    x, b = _wrap(x), _wrap(b)
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise DimensionError(f"add_bias: cannot add {b.shape} to rows of {x.shape}")

    def bw(g):
        return g, g.sum(axis=0)

    return _result(x.data + b.data, (x, b), bw, "add_bias")


def transpose(a):
    a = _wrap(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.shape}")
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape):
    a = _wrap(a)
    out = a.data.reshape(shape)
    return _result(out.copy(), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def take(a, index):
    """Gather entries of a vector at integer positions."""
    a = _wrap(a)
    idx = np.asarray(index, dtype=np.intp)
    if a.ndim != 1:
        raise DimensionError(f"take: expected a vector, got shape {a.shape}")

    def bw(g):
        out = np.zeros(a.shape, dtype=DTYPE)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), bw, "take")


def pick(a, cols):
    """Row-wise selection ``a[i, cols[i]]`` of an (n, K) matrix."""
    a = _wrap(a)
    cols = np.asarray(cols, dtype=np.intp)
    if a.ndim != 2 or cols.shape != (a.shape[0],):
        raise DimensionError(f"pick: {cols.shape} column indices for matrix {a.shape}")
    rows = np.arange(a.shape[0])

    def bw(g):
        out = np.zeros(a.shape, dtype=DTYPE)
        out[rows, cols] = g
        return (out,)

    return _result(a.data[rows, cols], (a,), bw, "pick")


def stack(items: Sequence[Tensor]):
    """Join single-element tensors into a vector."""
    items = [_wrap(t) for t in items]
    for t in items:
        if t.size != 1:
            raise DimensionError(f"stack: expected single-element tensors, got {t.shape}")
    data = np.array([t.data.reshape(-1)[0] for t in items], dtype=DTYPE)

    def bw(g):
        return tuple(np.full(t.shape, g[i], dtype=DTYPE) for i, t in enumerate(items))

    return _result(data, tuple(items), bw, "stack")


def embedding_bag(table, ids, lengths):
    """Mean of embedding rows over the first ``lengths[i]`` ids of each row.

    ``ids`` is an (n, T) integer matrix padded on the right; ``lengths`` must
    be at least 1 for every row.
    """
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.intp)
    lengths = np.asarray(lengths, dtype=np.intp)
    if ids.ndim != 2 or lengths.shape != (ids.shape[0],):
        raise DimensionError(f"embedding_bag: ids {ids.shape} with lengths {lengths.shape}")
    if np.any(lengths < 1):
        raise ContractError("embedding_bag: every row needs at least one id")
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise DomainError(f"embedding_bag: token id outside [0, {vocab})")
    mask = np.arange(ids.shape[1])[None, :] < lengths[:, None]
    weights = mask / lengths[:, None].astype(DTYPE)
    out = np.einsum("nt,ntd->nd", weights, table.data[ids])

    def bw(g):
        full = np.zeros(table.shape, dtype=DTYPE)
        np.add.at(full, ids[mask], (weights[:, :, None] * g[:, None, :])[mask])
        return (full,)

    return _result(out, (table,), bw, "embedding_bag")


# ---------------------------------------------------------------- gradients

def _toposort(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, params=None, include_frozen=False):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad.

    When ``params`` (a name -> Tensor mapping such as a ParameterStore) is
    given, returns a dict of gradient arrays keyed by name.  Trainable
    parameters not reached by the graph map to zeros; frozen parameters are
    omitted unless ``include_frozen`` is set, in which case they map to zeros.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if params is None:
        return None
    return gradient_map(params, include_frozen=include_frozen)


def gradient_map(params, include_frozen=False):
    out = {}
    for name, p in _items(params):
        if p.requires_grad:
            out[name] = p.grad.copy() if p.grad is not None else np.zeros(p.shape, dtype=DTYPE)
        elif include_frozen:
            out[name] = np.zeros(p.shape, dtype=DTYPE)
    return out


def grad_norm(params, names: Iterable[str] | None = None):
    """L2 norm of the accumulated gradients of the selected parameters."""
    total = 0.0
    lookup = dict(_items(params))
    for name in (names if names is not None else lookup):
        g = lookup[name].grad
        if g is not None:
            total += float(np.sum(g * g))
    return float(np.sqrt(total))


def _items(params):
    if isinstance(params, Mapping) or hasattr(params, "items"):
        return list(params.items())
    return [(t.name or str(i), t) for i, t in enumerate(params)]


def finite_diff(f: Callable[[], object], params, h: float = 1e-5):
    """Central-difference gradient of ``f`` with respect to every coordinate.

    ``f`` takes no arguments and reads the parameters in place; each
    coordinate is perturbed by +-h and restored afterwards.
    """
    if h <= 0:
        raise ContractError("finite_diff step must be positive")

    def value():
        out = f()
        return float(out.data.reshape(-1)[0]) if isinstance(out, Tensor) else float(out)

    result = {}
    for name, p in _items(params):
        flat = p.data.reshape(-1)
        est = np.zeros(flat.shape, dtype=DTYPE)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = value()
            flat[i] = orig - h
            fm = value()
            flat[i] = orig
            est[i] = (fp - fm) / (2.0 * h)
        result[name] = est.reshape(p.shape)
    return result
