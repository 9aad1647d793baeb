"""Minimal reverse-mode differentiation over complex numpy arrays.

Gradients of a real scalar loss are stored with the convention
``grad = dL/dRe(z) + 1j * dL/dIm(z)``; for real nodes the gradient is real.
Under this convention a holomorphic map ``w = f(z)`` back-propagates as
``grad_z = grad_w * conj(f'(z))``.

Only the operations needed by the sensing/communication pipeline are
provided. Anything that should be gradient-opaque is simply computed on
plain arrays and wrapped with :func:`const`.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad, shape, is_complex):
    if not is_complex:
        grad = np.real(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """A node of the tape: a value plus the closures that push gradients
    back to its parents."""

    __slots__ = ("value", "grad", "parents", "requires_grad")
    __array_ufunc__ = None

    def __init__(self, value, parents=(), requires_grad=False):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = parents
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in parents)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_complex(self):
        return np.iscomplexobj(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, dtype={self.value.dtype})"

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_var(other)))

    def __rsub__(self, other):
        return add(as_var(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, reciprocal(as_var(other)))

    def __rtruediv__(self, other):
        return mul(as_var(other), reciprocal(self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_var(other), self)

    def __getitem__(self, index):
        return take(self, index)

    def conj(self):
        return conj(self)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mT(self):
        return swapaxes(self, -1, -2)

    def reshape(self, *shape):
        return reshape(self, *shape)

    # backward ---------------------------------------------------------
    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node.parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node.grad is None:
                continue
            for parent, push in node.parents:
                if not parent.requires_grad:
                    continue
                g = push(node.grad)
                g = _unbroadcast(g, parent.value.shape, parent.is_complex)
                parent.grad = g if parent.grad is None else parent.grad + g


def as_var(x):
    return x if isinstance(x, Var) else Var(x)


def const(x):
    """Wrap a value so that no gradient flows into it."""
    return Var(np.asarray(x.value if isinstance(x, Var) else x))


def param(x):
    return Var(np.array(x, copy=True), requires_grad=True)


def value(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


# elementary ops -------------------------------------------------------

def add(a, b):
    a, b = as_var(a), as_var(b)
    return Var(a.value + b.value, ((a, lambda g: g), (b, lambda g: g)))


def neg(a):
    return Var(-a.value, ((a, lambda g: -g),))


def mul(a, b):
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    return Var(av * bv, ((a, lambda g: g * np.conj(bv)), (b, lambda g: g * np.conj(av))))


def reciprocal(a):
    out = 1.0 / a.value
    return Var(out, ((a, lambda g: -g * np.conj(out * out)),))


def conj(a):
    return Var(np.conj(a.value), ((a, lambda g: np.conj(g)),))


def real(a):
    return Var(np.real(a.value), ((a, lambda g: g + 0j),))


def imag(a):
    return Var(np.imag(a.value), ((a, lambda g: 1j * g),))


def exp(a):
    out = np.exp(a.value)
    return Var(out, ((a, lambda g: g * np.conj(out)),))


def log(a):
    av = a.value
    return Var(np.log(av), ((a, lambda g: g / np.conj(av)),))


def sqrt(a):
    out = np.sqrt(a.value)
    return Var(out, ((a, lambda g: g / (2.0 * np.conj(out))),))


def sin(a):
    av = a.value
    return Var(np.sin(av), ((a, lambda g: g * np.conj(np.cos(av))),))


def cos(a):
    av = a.value
    return Var(np.cos(av), ((a, lambda g: -g * np.conj(np.sin(av))),))


def abs2(a):
    """|a|**2, real output."""
    av = a.value
    return Var((av * np.conj(av)).real, ((a, lambda g: 2.0 * g * av),))


def matmul(a, b):
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def grad_a(g):
        return g @ np.conj(np.swapaxes(bv, -1, -2))

    def grad_b(g):
        return np.conj(np.swapaxes(av, -1, -2)) @ g

    return Var(av @ bv, ((a, grad_a), (b, grad_b)))


def vsum(a, axis=None, keepdims=False):
    shape = a.value.shape

    def push(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return Var(a.value.sum(axis=axis, keepdims=keepdims), ((a, push),))


def mean(a, axis=None):
    n = a.value.size if axis is None else a.value.shape[axis]
    return vsum(a, axis=axis) * (1.0 / n)


def reshape(a, *shape):
    old = a.value.shape
    return Var(a.value.reshape(*shape), ((a, lambda g: g.reshape(old)),))


def swapaxes(a, ax1, ax2):
    return Var(np.swapaxes(a.value, ax1, ax2), ((a, lambda g: np.swapaxes(g, ax1, ax2)),))


def transpose(a, axes):
    inverse = np.argsort(axes)
    return Var(np.transpose(a.value, axes), ((a, lambda g: np.transpose(g, inverse)),))


def take(a, index):
    """Basic or fancy indexing; repeated indices accumulate in backward."""
    shape, dtype = a.value.shape, a.value.dtype

    def push(g):
        out = np.zeros(shape, dtype=np.result_type(dtype, g.dtype))
        np.add.at(out, index, g)
        return out

    return Var(a.value[index], ((a, push),))


def solve(a, b):
    """x = a^{-1} b for square a."""
    a, b = as_var(a), as_var(b)
    x = np.linalg.solve(a.value, b.value)
    cache = {}

    def grad_b(g):
        if "gb" not in cache:
            cache["gb"] = np.linalg.solve(np.conj(np.swapaxes(a.value, -1, -2)), g)
        return cache["gb"]

    def grad_a(g):
        gb = grad_b(g)
        return -gb @ np.conj(np.swapaxes(x, -1, -2))

    return Var(x, ((a, grad_a), (b, grad_b)))


def softmax(a, axis=-1, mask=None):
    """Softmax of a real node along ``axis``; entries where ``mask`` is
    False get probability zero."""
    x = np.array(a.value, dtype=float)
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    shift = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - shift)
    s = e / e.sum(axis=axis, keepdims=True)

    def push(g):
        return s * (g - (g * s).sum(axis=axis, keepdims=True))

    return Var(s, ((a, push),))


def logsumexp(a, axis=-1):
    x = a.value
    shift = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - shift)
    tot = e.sum(axis=axis, keepdims=True)
    out = (np.log(tot) + shift).squeeze(axis)

    def push(g):
        return np.expand_dims(g, axis) * (e / tot)

    return Var(out, ((a, push),))


def stack(items, axis=0):
    items = [as_var(x) for x in items]
    out = np.stack([x.value for x in items], axis=axis)

    def picker(i):
        return lambda g: np.take(g, i, axis=axis)

    return Var(out, tuple((x, picker(i)) for i, x in enumerate(items)))
