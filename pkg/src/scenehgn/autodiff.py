"""Reverse-mode automatic differentiation on numpy arrays.

Tiny tape-based engine. Every operation returns a :class:`Var` holding the
forward value and a vector-Jacobian closure over its parents. Piecewise
operations (gathers, leaky ReLU, abs) fix their branch at forward time, so
gradients are exact for the locally active branch.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    shape = tuple(shape)
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Var:
    """One node of the tape: forward value plus backward closure."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, parents=(), vjp=None):
        if type(value) is np.ndarray and value.dtype == np.float64:
            self.value = value
        else:
            self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value)

    # arithmetic -----------------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return vmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def as_var(x):
    return x if isinstance(x, Var) else Var(x)


def backward(root):
    """Run reverse accumulation from `root`; fills .grad on reachable nodes."""
    order = []
    seen = set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None:
                continue
            # gradients are never mutated in place, so aliasing g is safe
            parent.grad = g if parent.grad is None else parent.grad + g


# elementwise binary ---------------------------------------------------------


def add(a, b):
    a, b = as_var(a), as_var(b)
    va, vb = a.value, b.value

    def vjp(g):
        return _unbroadcast(g, va.shape), _unbroadcast(g, vb.shape)

    return Var(va + vb, (a, b), vjp)


def sub(a, b):
    a, b = as_var(a), as_var(b)
    va, vb = a.value, b.value

    def vjp(g):
        return _unbroadcast(g, va.shape), _unbroadcast(-g, vb.shape)

    return Var(va - vb, (a, b), vjp)


def mul(a, b):
    a, b = as_var(a), as_var(b)
    va, vb = a.value, b.value

    def vjp(g):
        return _unbroadcast(g * vb, va.shape), _unbroadcast(g * va, vb.shape)

    return Var(va * vb, (a, b), vjp)


def div(a, b):
    a, b = as_var(a), as_var(b)
    va, vb = a.value, b.value

    def vjp(g):
        return (
            _unbroadcast(g / vb, va.shape),
            _unbroadcast(-g * va / (vb * vb), vb.shape),
        )

    return Var(va / vb, (a, b), vjp)


def neg(a):
    a = as_var(a)
    return Var(-a.value, (a,), lambda g: (-g,))


def power(a, exponent):
    """a ** exponent for a constant scalar exponent."""
    a = as_var(a)
    e = float(exponent)
    va = a.value

    def vjp(g):
        return (g * e * va ** (e - 1.0),)

    return Var(va**e, (a,), vjp)


def matmul(a, b):
    a, b = as_var(a), as_var(b)
    va, vb = a.value, b.value
    out = va @ vb

    def vjp(g):
        g = np.asarray(g)
        if va.ndim == 2 and vb.ndim == 2:
            return g @ vb.T, va.T @ g
        if va.ndim == 2 and vb.ndim == 1:
            return np.outer(g, vb), va.T @ g
        if va.ndim == 1 and vb.ndim == 2:
            return g @ vb.T, np.outer(va, g)
        if va.ndim == 1 and vb.ndim == 1:
            return g * vb, g * va
        raise ValueError("unsupported matmul operand ranks")

    return Var(out, (a, b), vjp)


# elementwise unary -----------------------------------------------------------


def sin(a):
    a = as_var(a)
    return Var(np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),))


def cos(a):
    a = as_var(a)
    return Var(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),))


def exp(a):
    a = as_var(a)
    out = np.exp(a.value)
    return Var(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_var(a)
    return Var(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a):
    a = as_var(a)
    out = np.sqrt(a.value)
    return Var(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a):
    a = as_var(a)
    out = np.tanh(a.value)
    return Var(out, (a,), lambda g: (g * (1.0 - out * out),))


def absolute(a):
    a = as_var(a)
    s = np.sign(a.value)
    return Var(np.abs(a.value), (a,), lambda g: (g * s,))


def sigmoid(a):
    a = as_var(a)
    x = a.value
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Var(out, (a,), vjp)


def softplus(a):
    a = as_var(a)
    x = a.value
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def vjp(g):
        return (g * sig,)

    return Var(out, (a,), vjp)


def leaky_relu(a, alpha=0.01):
    a = as_var(a)
    mask = np.where(a.value > 0, 1.0, alpha)
    return Var(a.value * mask, (a,), lambda g: (g * mask,))


def atan2(y, x):
    y, x = as_var(y), as_var(x)
    vy, vx = y.value, x.value
    denom = vx * vx + vy * vy

    def vjp(g):
        return (
            _unbroadcast(g * vx / denom, vy.shape),
            _unbroadcast(-g * vy / denom, vx.shape),
        )

    return Var(np.arctan2(vy, vx), (y, x), vjp)


# shape manipulation ----------------------------------------------------------


def reshape(a, shape):
    a = as_var(a)
    orig = a.value.shape
    return Var(a.value.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def concat(parts, axis=0):
    parts = [as_var(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Var(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), vjp)


def stack(parts, axis=0):
    parts = [as_var(p) for p in parts]

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return Var(np.stack([p.value for p in parts], axis=axis), tuple(parts), vjp)


def getitem(a, key):
    """Basic indexing (ints/slices); each output element maps to one input."""
    a = as_var(a)
    val = a.value[key]

    def vjp(g):
        out = np.zeros_like(a.value)
        out[key] = g
        return (out,)

    return Var(val, (a,), vjp)


def take_rows(a, indices):
    """Gather rows along axis 0 with an integer index array."""
    a = as_var(a)
    idx = np.asarray(indices)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return Var(a.value[idx], (a,), vjp)


# reductions ------------------------------------------------------------------


def vsum(a, axis=None, keepdims=False):
    a = as_var(a)
    val = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return Var(val, (a,), vjp)


def vmean(a, axis=None, keepdims=False):
    a = as_var(a)
    if axis is None:
        count = a.value.size
    else:
        count = a.value.shape[axis]
    return vsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def dot(a, b):
    return vsum(mul(a, b))


def squared_norm(a):
    return vsum(mul(a, a))
