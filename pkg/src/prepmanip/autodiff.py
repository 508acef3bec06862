"""Small reverse-mode automatic differentiation over numpy float64 arrays."""
from __future__ import annotations

import numpy as np


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward needs an explicit gradient for non-scalars")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                grads[id(p)] = grads[id(p)] + pg if id(p) in grads else pg

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data + b.data, parents=(a, b),
                  backward_fn=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data - b.data, parents=(a, b),
                  backward_fn=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data * b.data, parents=(a, b),
                  backward_fn=lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return Tensor(out, parents=(a, b),
                  backward_fn=lambda g: (_unbroadcast(g / b.data, a.shape),
                                         _unbroadcast(-g * out / b.data, b.shape)))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return Tensor(a.data @ b.data, parents=(a, b), backward_fn=bw)


def relu(a):
    mask = a.data > 0
    return Tensor(a.data * mask, parents=(a,), backward_fn=lambda g: (g * mask,))


def sigmoid(a):
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g * out * (1.0 - out),))


def exp(a):
    out = np.exp(a.data)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g * out,))


def log(a):
    return Tensor(np.log(a.data), parents=(a,), backward_fn=lambda g: (g / a.data,))


def sqrt(a):
    out = np.sqrt(a.data)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g * 0.5 / out,))


def tabs(a):
    return Tensor(np.abs(a.data), parents=(a,), backward_fn=lambda g: (g * np.sign(a.data),))


def arccos(a, eps=1e-7):
    """arccos of the argument clipped to [-1, 1]; the gradient is zeroed
    within ``eps`` of the ends so it stays finite."""
    x = np.clip(a.data, -1.0 + eps, 1.0 - eps)
    inside = (a.data > -1.0 + eps) & (a.data < 1.0 - eps)
    return Tensor(np.arccos(np.clip(a.data, -1.0, 1.0)), parents=(a,),
                  backward_fn=lambda g: (-g * inside / np.sqrt(1.0 - x * x),))


def tsum(a, axis=None, keepdims=False):
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=(a,), backward_fn=bw)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def tmax(a, axis):
    """Max over ``axis``; the gradient goes to the first maximizing entry."""
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)
    return Tensor(out, parents=(a,), backward_fn=bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors), backward_fn=bw)


def getitem(a, idx):
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)
    return Tensor(a.data[idx], parents=(a,), backward_fn=bw)


def reshape(a, shape):
    return Tensor(a.data.reshape(shape), parents=(a,), backward_fn=lambda g: (g.reshape(a.shape),))


def broadcast_to(a, shape):
    return Tensor(np.broadcast_to(a.data, shape).copy(), parents=(a,),
                  backward_fn=lambda g: (_unbroadcast(g, a.shape),))


def cross(a, b):
    """Row-wise cross product over the last axis."""
    a1, a2, a3 = a[..., 0], a[..., 1], a[..., 2]
    b1, b2, b3 = b[..., 0], b[..., 1], b[..., 2]
    return stack([a2 * b3 - a3 * b2, a3 * b1 - a1 * b3, a1 * b2 - a2 * b1], axis=-1)


def stack(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis if axis >= 0 else tensors[0].ndim + 1 + axis
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in tensors]
    return concat(expanded, axis=ax)
