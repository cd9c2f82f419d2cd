"""Minimal reverse-mode autodiff over dense numpy arrays.

A small tape covering exactly the operations the policy, value, and penalty
computations need: broadcast arithmetic, matmul, the usual nonlinearities,
reductions, elementwise minimum, and clipping. Everything is float64.

The module-level helpers (``sigmoid``, ``relu``, ...) dispatch on input
type, so forward code written once runs either on the tape (``Tensor``) or
as a plain no-grad numpy fast path (``ndarray``).
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_back")

    # Make ndarray <op> Tensor defer to Tensor's reflected methods instead of
    # producing object arrays.
    __array_ufunc__ = None

    def __init__(self, data, parents=(), back=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._back = back

    @property
    def shape(self):
        return self.data.shape

    def _accum(self, g: np.ndarray) -> None:
        g = _unbroadcast(np.asarray(g, np.float64), self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    # -- graph construction -------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        out = Tensor(self.data + other.data, (self, other))
        out._back = lambda g: (self._accum(g), other._accum(g))
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,))
        out._back = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        return self + (-_wrap(other))

    def __rsub__(self, other):
        return _wrap(other) + (-self)

    def __mul__(self, other):
        other = _wrap(other)
        out = Tensor(self.data * other.data, (self, other))
        out._back = lambda g: (self._accum(g * other.data), other._accum(g * self.data))
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)
        out = Tensor(self.data / other.data, (self, other))

        def back(g):
            self._accum(g / other.data)
            other._accum(-g * self.data / (other.data**2))

        out._back = back
        return out

    def __rtruediv__(self, other):
        return _wrap(other) / self

    def __matmul__(self, other):
        other = _wrap(other)
        out = Tensor(self.data @ other.data, (self, other))

        def back(g):
            self._accum(g @ other.data.T)
            other._accum(self.data.T @ g)

        out._back = back
        return out

    def __rmatmul__(self, other):
        return _wrap(other) @ self

    def square(self):
        out = Tensor(self.data**2, (self,))
        out._back = lambda g: self._accum(2.0 * self.data * g)
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def back(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape))

        out._back = back
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- backward -----------------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() is defined for scalar outputs only")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._back is not None and node.grad is not None:
                node._back(node.grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- dual-backend elementwise helpers ----------------------------------------


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: stable at both tails, no branching
    return 0.5 * (np.tanh(0.5 * np.asarray(x, np.float64)) + 1.0)


def sigmoid(x):
    if isinstance(x, Tensor):
        s = _np_sigmoid(x.data)
        out = Tensor(s, (x,))
        out._back = lambda g: x._accum(g * s * (1.0 - s))
        return out
    return _np_sigmoid(np.asarray(x, np.float64))


def tanh(x):
    if isinstance(x, Tensor):
        t = np.tanh(x.data)
        out = Tensor(t, (x,))
        out._back = lambda g: x._accum(g * (1.0 - t**2))
        return out
    return np.tanh(x)


def relu(x):
    if isinstance(x, Tensor):
        mask = x.data > 0
        out = Tensor(np.where(mask, x.data, 0.0), (x,))
        out._back = lambda g: x._accum(g * mask)
        return out
    return np.maximum(x, 0.0)


def exp(x):
    if isinstance(x, Tensor):
        e = np.exp(x.data)
        out = Tensor(e, (x,))
        out._back = lambda g: x._accum(g * e)
        return out
    return np.exp(x)


def log(x):
    if isinstance(x, Tensor):
        out = Tensor(np.log(x.data), (x,))
        out._back = lambda g: x._accum(g / x.data)
        return out
    return np.log(x)


def softplus(x):
    """log(1 + e^x), computed stably."""
    if isinstance(x, Tensor):
        out = Tensor(np.logaddexp(0.0, x.data), (x,))
        out._back = lambda g: x._accum(g * _np_sigmoid(x.data))
        return out
    return np.logaddexp(0.0, x)


def square(x):
    if isinstance(x, Tensor):
        return x.square()
    return np.square(x)


def minimum(a, b):
    """Elementwise min; ties route the gradient to the first argument."""
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        a, b = _wrap(a), _wrap(b)
        take_a = a.data <= b.data
        out = Tensor(np.where(take_a, a.data, b.data), (a, b))
        out._back = lambda g: (a._accum(g * take_a), b._accum(g * ~take_a))
        return out
    return np.minimum(a, b)


def clip(x, lo: float, hi: float):
    """Clamp to [lo, hi]; gradient passes only strictly inside the interval."""
    if isinstance(x, Tensor):
        mask = (x.data > lo) & (x.data < hi)
        out = Tensor(np.clip(x.data, lo, hi), (x,))
        out._back = lambda g: x._accum(g * mask)
        return out
    return np.clip(x, lo, hi)


def concat_cols(parts):
    """Column-wise concatenation of 2-D blocks (numpy fast path only)."""
    return np.concatenate([np.asarray(p, np.float64) for p in parts], axis=1)
