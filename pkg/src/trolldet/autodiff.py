"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation here is polymorphic: called on plain ndarrays it computes
with numpy and returns an ndarray (the cheap inference path); as soon as a
:class:`Var` appears among the inputs it records the op on a tape and
returns a Var, so calling ``backward()`` on a downstream scalar yields
exact gradients for every leaf. Model code is therefore written once and
serves both inference and training.

All values are float64. Gradients accumulate into ``Var.grad``.
"""

from __future__ import annotations

import numpy as np


class Var:
    """A node in the computation tape: an array value plus its history."""

    __slots__ = ("data", "grad", "_inputs", "_vjp")

    def __init__(self, data, _inputs=(), _vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._inputs = _inputs
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def backward(self, seed=None):
        """Propagate gradients from this node to every reachable leaf.

        ``seed`` defaults to ones, i.e. this node is treated as the loss.
        """
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._inputs:
                if isinstance(parent, Var) and id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data) if seed is None else np.asarray(seed, dtype=np.float64)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._inputs, node._vjp(node.grad)):
                if g is None or not isinstance(parent, Var):
                    continue
                if parent.grad is None:
                    parent.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
                else:
                    parent.grad = parent.grad + g

    # arithmetic sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        return f"Var(shape={self.data.shape})"


def value(x):
    """Raw numpy value of ``x`` whether or not it is traced."""
    return x.data if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _traced(*xs):
    return any(isinstance(x, Var) for x in xs)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    g = np.asarray(g, dtype=np.float64)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# binary ops -----------------------------------------------------------

def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv
    if not _traced(a, b):
        return out
    return Var(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value(a), value(b)
    out = av - bv
    if not _traced(a, b):
        return out
    return Var(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value(a), value(b)
    out = av * bv
    if not _traced(a, b):
        return out
    return Var(out, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    if not _traced(a, b):
        return out

    def vjp(g):
        return (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * av / (bv * bv), bv.shape))

    return Var(out, (a, b), vjp)


def matmul(a, b):
    av, bv = value(a), value(b)
    out = av @ bv
    if not _traced(a, b):
        return out

    def vjp(g):
        if av.ndim == 1 and bv.ndim == 1:  # inner product -> scalar
            return (g * bv, g * av)
        if av.ndim == 1:  # (k,) @ (k, n) -> (n,)
            return (g @ bv.T, np.outer(av, g))
        if bv.ndim == 1:  # (m, k) @ (k,) -> (m,)
            return (np.outer(g, bv), av.T @ g)
        return (g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g)

    return Var(out, (a, b), vjp)


def power(a, exponent):
    """Elementwise ``a ** exponent`` for a constant exponent."""
    av = value(a)
    out = av ** exponent
    if not _traced(a):
        return out
    return Var(out, (a,), lambda g: (g * exponent * av ** (exponent - 1),))


# elementwise nonlinearities -------------------------------------------

def tanh(a):
    av = value(a)
    out = np.tanh(av)
    if not _traced(a):
        return out
    return Var(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    av = value(a)
    # piecewise-stable logistic
    out = np.where(av >= 0, 1.0 / (1.0 + np.exp(-np.abs(av))), np.exp(-np.abs(av)) / (1.0 + np.exp(-np.abs(av))))
    if not _traced(a):
        return out
    return Var(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    av = value(a)
    out = np.maximum(av, 0.0)
    if not _traced(a):
        return out
    return Var(out, (a,), lambda g: (g * (av > 0.0),))


def exp(a):
    av = value(a)
    out = np.exp(av)
    if not _traced(a):
        return out
    return Var(out, (a,), lambda g: (g * out,))


def log(a):
    av = value(a)
    out = np.log(av)
    if not _traced(a):
        return out
    return Var(out, (a,), lambda g: (g / av,))


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient passes through only inside the interval."""
    av = value(a)
    out = np.clip(av, lo, hi)
    if not _traced(a):
        return out
    inside = (av >= lo) & (av <= hi)
    return Var(out, (a,), lambda g: (g * inside,))


# reductions -----------------------------------------------------------

def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors np.sum
    av = value(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)
    if not _traced(a):
        return out

    def vjp(g):
        g = np.asarray(g, dtype=np.float64)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, av.shape).copy(),)

    return Var(out, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    av = value(a)
    n = av.size if axis is None else av.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def amax(a, axis):
    """Max along ``axis``; gradient routes to the first maximal entry."""
    av = value(a)
    out = np.max(av, axis=axis)
    if not _traced(a):
        return out
    idx = np.argmax(av, axis=axis)

    def vjp(g):
        grad = np.zeros_like(av)
        np.put_along_axis(grad, np.expand_dims(idx, axis), np.expand_dims(np.asarray(g), axis), axis)
        return (grad,)

    return Var(out, (a,), vjp)


# shape ops ------------------------------------------------------------

def reshape(a, shape):
    av = value(a)
    out = av.reshape(shape)
    if not _traced(a):
        return out
    return Var(out, (a,), lambda g: (np.asarray(g).reshape(av.shape),))


def transpose(a, axes=None):
    av = value(a)
    out = np.transpose(av, axes)
    if not _traced(a):
        return out
    inv = None if axes is None else np.argsort(axes)
    return Var(out, (a,), lambda g: (np.transpose(np.asarray(g), inv),))


def getitem(a, idx):
    av = value(a)
    out = av[idx]
    if not _traced(a):
        return out

    def vjp(g):
        grad = np.zeros_like(av)
        np.add.at(grad, idx, g)
        return (grad,)

    return Var(out, (a,), vjp)


def take_rows(matrix, ids):
    """Row gather ``matrix[ids]``; the gradient scatter-adds back."""
    return getitem(matrix, np.asarray(ids, dtype=np.intp))


def concat(parts, axis=0):
    vals = [value(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    if not _traced(*parts):
        return out
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(np.asarray(g), splits, axis=axis))

    return Var(out, tuple(parts), vjp)


def stack(parts, axis=0):
    vals = [value(p) for p in parts]
    out = np.stack(vals, axis=axis)
    if not _traced(*parts):
        return out

    def vjp(g):
        g = np.asarray(g)
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return Var(out, tuple(parts), vjp)


# composed helpers -----------------------------------------------------

def softmax(a, axis=-1):
    """Softmax along ``axis``; the shift by the detached max is exact
    because softmax is invariant to a per-row constant."""
    shift = np.max(value(a), axis=axis, keepdims=True)
    e = exp(sub(a, shift))
    return div(e, sum(e, axis=axis, keepdims=True))


def masked_softmax(scores, mask, axis=-1):
    """Softmax over entries where ``mask`` is 1; masked entries get exactly
    zero weight and contribute nothing to the gradient.

    ``mask`` is a constant 0/1 array broadcastable to ``scores``. Every row
    must contain at least one valid entry.
    """
    mask = np.asarray(mask, dtype=np.float64)
    sv = value(scores)
    shift = np.max(np.where(mask > 0, sv, -np.inf), axis=axis, keepdims=True)
    # zero the exponent at masked entries so stray large scores cannot
    # overflow into inf * 0
    e = mul(exp(mul(sub(scores, shift), mask)), mask)
    return div(e, sum(e, axis=axis, keepdims=True))


def logsumexp(a, axis=-1):
    shift = np.max(value(a), axis=axis, keepdims=True)
    out = add(log(sum(exp(sub(a, shift)), axis=axis)), np.squeeze(shift, axis=axis))
    return out
