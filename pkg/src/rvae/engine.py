"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; calling
``backward`` on a scalar (or seeding a vector output) walks the tape in
reverse topological order and accumulates gradients into every reachable
node.  Only the operations the models need are provided.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "exp",
    "log",
    "relu",
    "sigmoid",
    "softplus",
    "clip",
    "matmul",
    "tsum",
    "tmean",
    "reshape",
    "concat",
    "slice_cols",
    "take_rows",
    "gather_cols",
    "log_softmax",
]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A node on the tape: value, accumulated gradient, backward closure."""

    __slots__ = ("value", "grad", "_parents", "_bw")

    def __init__(self, value, parents=(), bw=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = parents
        self._bw = bw

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def _acc(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self, seed=None) -> None:
        """Run reverse-mode accumulation from this node.

        `seed` defaults to 1.0 and is only optional for scalar outputs.
        Gradients of every node reachable from here are reset first, so
        repeated calls do not accumulate across tapes.
        """
        if seed is None:
            if self.value.ndim != 0:
                raise ValueError("backward() without a seed requires a scalar output")
            seed = 1.0
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != self.value.shape:
            raise ValueError(f"seed shape {seed.shape} does not match output shape {self.value.shape}")
        order = self._topo()
        for node in order:
            node.grad = None
        self._acc(seed)
        for node in reversed(order):
            if node._bw is not None and node.grad is not None:
                node._bw(node.grad)

    def _topo(self) -> list["Tensor"]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return tmean(self, axis=axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.value + b.value, (a, b))

    def bw(g):
        a._acc(_unbroadcast(g, a.value.shape))
        b._acc(_unbroadcast(g, b.value.shape))

    out._bw = bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.value - b.value, (a, b))

    def bw(g):
        a._acc(_unbroadcast(g, a.value.shape))
        b._acc(-_unbroadcast(g, b.value.shape))

    out._bw = bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.value * b.value, (a, b))

    def bw(g):
        a._acc(_unbroadcast(g * b.value, a.value.shape))
        b._acc(_unbroadcast(g * a.value, b.value.shape))

    out._bw = bw
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.value, (a,))
    out._bw = lambda g: a._acc(-g)
    return out


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.value), (a,))
    out._bw = lambda g: a._acc(g * out.value)
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.value), (a,))
    out._bw = lambda g: a._acc(g / a.value)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.value, 0.0), (a,))
    out._bw = lambda g: a._acc(g * (a.value > 0.0))
    return out


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function (plain ndarray in and out)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = stable_sigmoid(a.value)
    out = Tensor(s, (a,))
    out._bw = lambda g: a._acc(g * s * (1.0 - s))
    return out


def softplus(a: Tensor) -> Tensor:
    out = Tensor(np.logaddexp(0.0, a.value), (a,))
    out._bw = lambda g: a._acc(g * stable_sigmoid(a.value))
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    # gradient passes inside [lo, hi] and is zero outside, like torch.clamp
    out = Tensor(np.clip(a.value, lo, hi), (a,))
    mask = (a.value >= lo) & (a.value <= hi)
    out._bw = lambda g: a._acc(g * mask)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    out = Tensor(a.value @ b.value, (a, b))

    def bw(g):
        a._acc(g @ b.value.T)
        b._acc(a.value.T @ g)

    out._bw = bw
    return out


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.value.sum(axis=axis, keepdims=keepdims), (a,))

    def bw(g):
        if axis is None:
            a._acc(np.broadcast_to(g, a.value.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._acc(np.broadcast_to(g, a.value.shape).copy())

    out._bw = bw
    return out


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.value.reshape(shape), (a,))
    out._bw = lambda g: a._acc(g.reshape(a.value.shape))
    return out


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, stop)
            t._acc(g[tuple(idx)])

    out._bw = bw
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.value.ndim != 2:
        raise ValueError("slice_cols expects a 2-D tensor")
    out = Tensor(a.value[:, start:stop], (a,))

    def bw(g):
        buf = np.zeros_like(a.value)
        buf[:, start:stop] = g
        a._acc(buf)

    out._bw = bw
    return out


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather, e.g. embedding lookup: (C, d)[idx] -> (B, d)."""
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.value[idx], (a,))

    def bw(g):
        buf = np.zeros_like(a.value)
        np.add.at(buf, idx, g)
        a._acc(buf)

    out._bw = bw
    return out


def gather_cols(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one column per row: (B, C), (B,) -> (B,)."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.value.shape[0])
    out = Tensor(a.value[rows, idx], (a,))

    def bw(g):
        buf = np.zeros_like(a.value)
        np.add.at(buf, (rows, idx), g)
        a._acc(buf)

    out._bw = bw
    return out


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log softmax of a 2-D tensor, stabilized by max subtraction."""
    x = a.value
    m = x.max(axis=1, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    val = shifted - lse
    out = Tensor(val, (a,))

    def bw(g):
        p = np.exp(val)
        a._acc(g - p * g.sum(axis=1, keepdims=True))

    out._bw = bw
    return out
