"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Supports exactly the operations the affinity network, the assignment layer
and the policy losses need: elementwise arithmetic with broadcasting,
matmul, ReLU, exp/log/sqrt, reductions, row softmax, concatenation and a
few row-shaping ops. Gradients accumulate on `Tensor.grad` after calling
`backward` on a scalar.
"""

from __future__ import annotations

import itertools
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ContractError",
    "no_grad",
    "is_grad_enabled",
    "parameter",
    "constant",
    "backward",
    "concat",
    "softmax_rows",
    "repeat_rows",
    "tile_rows",
    "slice_rows",
    "maximum",
    "minimum",
]


class ContractError(ValueError):
    """An operation was called outside its declared contract."""


_grad_enabled = True
_tape_counter = itertools.count()


class no_grad:
    """Context manager disabling graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (g, s) in enumerate(zip(grad.shape, shape)):
        if s == 1 and g != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tape_id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape_id = next(_tape_counter)
        self._parents = _parents
        self._backward = _backward

    # -- basics ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zeros(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ---------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _node(data, parents, bw) -> "Tensor":
        track = _grad_enabled and any(p.requires_grad or p._parents for p in parents)
        if not track:
            return Tensor(data)
        return Tensor(data, _parents=tuple(parents), _backward=bw)

    def backward(self, params: Iterable["Tensor"] | None = None) -> None:
        backward(self, params)

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        o = Tensor._lift(other)
        a, b = self, o

        def bw(g):
            return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

        return Tensor._node(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __sub__(self, other):
        o = Tensor._lift(other)
        a, b = self, o

        def bw(g):
            return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

        return Tensor._node(a.data - b.data, (a, b), bw)

    def __rsub__(self, other):
        return Tensor._lift(other) - self

    def __mul__(self, other):
        o = Tensor._lift(other)
        a, b = self, o

        def bw(g):
            return (
                _unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape),
            )

        return Tensor._node(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = Tensor._lift(other)
        a, b = self, o

        def bw(g):
            return (
                _unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
            )

        return Tensor._node(a.data / b.data, (a, b), bw)

    def __rtruediv__(self, other):
        return Tensor._lift(other) / self

    def __neg__(self):
        a = self

        def bw(g):
            return (-g,)

        return Tensor._node(-a.data, (a,), bw)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise ContractError("only scalar exponents are supported")
        a = self

        def bw(g):
            return (g * p * a.data ** (p - 1),)

        return Tensor._node(a.data**p, (a,), bw)

    def __matmul__(self, other):
        o = Tensor._lift(other)
        a, b = self, o

        def bw(g):
            return g @ b.data.T, a.data.T @ g

        return Tensor._node(a.data @ b.data, (a, b), bw)

    # -- elementwise functions ---------------------------------------------

    def relu(self):
        a = self
        mask = a.data > 0

        def bw(g):
            return (g * mask,)

        return Tensor._node(np.where(mask, a.data, 0.0), (a,), bw)

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def bw(g):
            return (g * out_data,)

        return Tensor._node(out_data, (a,), bw)

    def log(self):
        a = self

        def bw(g):
            return (g / a.data,)

        return Tensor._node(np.log(a.data), (a,), bw)

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)

        def bw(g):
            return (g * 0.5 / out_data,)

        return Tensor._node(out_data, (a,), bw)

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self

        def bw(g):
            if axis is None:
                return (np.broadcast_to(g, a.data.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, a.data.shape).copy(),)

        return Tensor._node(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)

    def mean(self, axis=None, keepdims=False):
        a = self
        if axis is None:
            count = a.data.size
        else:
            count = a.data.shape[axis]

        def bw(g):
            if axis is None:
                return (np.broadcast_to(g / count, a.data.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg / count, a.data.shape).copy(),)

        return Tensor._node(a.data.mean(axis=axis, keepdims=keepdims), (a,), bw)

    # -- shaping --------------------------------------------------------------

    @property
    def T(self):
        a = self

        def bw(g):
            return (g.T,)

        return Tensor._node(a.data.T, (a,), bw)

    def reshape(self, *shape):
        a = self
        old = a.data.shape

        def bw(g):
            return (g.reshape(old),)

        return Tensor._node(a.data.reshape(*shape), (a,), bw)


def parameter(data, rng: np.random.Generator | None = None) -> Tensor:
    """Leaf tensor updated by the optimizer."""
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Populate gradients of everything `loss` depends on.

    `loss` must be scalar. Parameters passed in `params` that do not
    participate in the computation get explicit zero gradients.
    """
    if loss.data.size != 1:
        raise ContractError("backward requires a scalar loss")
    # Iterative topological collection; creation order is a topological order.
    seen = {id(loss)}
    stack = [loss]
    nodes = []
    while stack:
        node = stack.pop()
        nodes.append(node)
        for p in node._parents:
            if id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    nodes.sort(key=lambda n: n.tape_id, reverse=True)

    loss.grad = np.ones_like(loss.data)
    for node in nodes:
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for p, g in zip(node._parents, grads):
            if g is None:
                continue
            if p.grad is None:
                p.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
            else:
                p.grad = p.grad + g
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


# -- free functions ------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return Tensor._node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax of a 2D tensor.

    `mask` marks admissible entries; masked-out entries get probability 0.
    Rows with no admissible entry come out as all zeros.
    """
    a = Tensor._lift(x)
    data = a.data
    if mask is None:
        z = data - data.max(axis=1, keepdims=True)
        e = np.exp(z)
    else:
        mask = np.asarray(mask, dtype=bool)
        any_row = mask.any(axis=1, keepdims=True)
        m = np.where(any_row, np.max(np.where(mask, data, -np.inf), axis=1, keepdims=True), 0.0)
        e = np.where(mask, np.exp(data - m), 0.0)
    s = e.sum(axis=1, keepdims=True)
    out_data = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def bw(g):
        inner = (g * out_data).sum(axis=1, keepdims=True)
        return (out_data * (g - inner),)

    return Tensor._node(out_data, (a,), bw)


def repeat_rows(x: Tensor, k: int) -> Tensor:
    """Repeat each row k times: (n, d) -> (n*k, d)."""
    a = Tensor._lift(x)
    n, d = a.data.shape

    def bw(g):
        return (g.reshape(n, k, d).sum(axis=1),)

    return Tensor._node(np.repeat(a.data, k, axis=0), (a,), bw)


def tile_rows(x: Tensor, k: int) -> Tensor:
    """Tile the whole block k times: (n, d) -> (k*n, d)."""
    a = Tensor._lift(x)
    n, d = a.data.shape

    def bw(g):
        return (g.reshape(k, n, d).sum(axis=0),)

    return Tensor._node(np.tile(a.data, (k, 1)), (a,), bw)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    a = Tensor._lift(x)
    shape = a.data.shape

    def bw(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return Tensor._node(a.data[start:stop].copy(), (a,), bw)


def maximum(x: Tensor, y) -> Tensor:
    a = Tensor._lift(x)
    b = Tensor._lift(y)
    take_a = a.data >= b.data

    def bw(g):
        return (
            _unbroadcast(g * take_a, a.data.shape),
            _unbroadcast(g * ~take_a, b.data.shape),
        )

    return Tensor._node(np.maximum(a.data, b.data), (a, b), bw)


def minimum(x: Tensor, y) -> Tensor:
    a = Tensor._lift(x)
    b = Tensor._lift(y)
    take_a = a.data <= b.data

    def bw(g):
        return (
            _unbroadcast(g * take_a, a.data.shape),
            _unbroadcast(g * ~take_a, b.data.shape),
        )

    return Tensor._node(np.minimum(a.data, b.data), (a, b), bw)
