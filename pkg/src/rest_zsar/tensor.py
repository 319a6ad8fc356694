"""Small reverse-mode autodiff over float64 numpy arrays.

Only the operations the encoder needs are provided. Every op records its
inputs and a closure that pushes the output gradient back to them; calling
:func:`backward` on a scalar replays those closures in reverse topological
order. Gradients accumulate (``+=``) so shared parameters work; call
:meth:`Tensor.zero_grad` between steps.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5


class ShapeError(ValueError):
    pass


class Tensor:
    __array_priority__ = 100  # make ndarray + Tensor dispatch to Tensor.__radd__

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, scalar):
        if not np.isscalar(scalar):
            raise TypeError("division only by a python scalar")
        return mul(self, 1.0 / scalar)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean(self)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn):
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg, _parents=parents if rg else (),
                  _backward=backward_fn if rg else None)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accum(t, g):
    if t.requires_grad:
        t.grad += g


# primitives -------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))
    return _result(out, (a, b), bw)


def neg(a):
    def bw(g):
        _accum(a, -g)
    return _result(-a.data, (a,), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))
    return _result(out, (a, b), bw)


def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))
    return _result(out, (a, b), bw)


def reshape(a, shape):
    def bw(g):
        _accum(a, g.reshape(a.shape))
    return _result(a.data.reshape(shape), (a,), bw)


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        _accum(a, g.transpose(inv))
    return _result(a.data.transpose(axes), (a,), bw)


def slice_(a, index):
    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, index, g)
            a.grad += full
    return _result(a.data[index], (a,), bw)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.grad += g[tuple(idx)]
    return _result(out, tuple(tensors), bw)


def embedding(table, ids):
    """Row lookup ``table[ids]``; repeated ids accumulate gradient."""
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        if table.requires_grad:
            np.add.at(table.grad, ids, g)
    return _result(table.data[ids], (table,), bw)


def sum_(a):
    def bw(g):
        _accum(a, np.broadcast_to(g, a.shape).copy())
    return _result(np.sum(a.data), (a,), bw)


def mean(a):
    n = a.data.size

    def bw(g):
        _accum(a, np.full(a.shape, g / n))
    return _result(np.mean(a.data), (a,), bw)


def softmax_masked(logits, mask):
    """Softmax over the last axis restricted to positions where ``mask`` is true.

    Disallowed positions get probability exactly 0. ``mask`` must broadcast to
    the logits' shape and leave at least one allowed entry per row.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not mask.any(axis=-1).all():
        raise ValueError("softmax_masked: a row has no allowed entries")
    z = np.where(mask, logits.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        _accum(logits, p * (g - (g * p).sum(axis=-1, keepdims=True)))
    return _result(p, (logits,), bw)


def layer_norm(x, gain, bias, eps=LN_EPS):
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    if x.shape[-1] != gain.shape[-1] or x.shape[-1] != bias.shape[-1]:
        raise ShapeError(f"layer_norm: last axis {x.shape[-1]} vs gain {gain.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    d = x.shape[-1]

    def bw(g):
        _accum(gain, _unbroadcast(g * xhat, gain.shape))
        _accum(bias, _unbroadcast(g, bias.shape))
        if x.requires_grad:
            gx = g * gain.data
            x.grad += inv / d * (d * gx - gx.sum(axis=-1, keepdims=True)
                                 - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
    return _result(out, (x, gain, bias), bw)


_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    # exact form x * Phi(x), not the tanh approximation
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data ** 2)
        _accum(x, g * (cdf + x.data * pdf))
    return _result(x.data * cdf, (x,), bw)


def cross_entropy(logits, target):
    """Mean negative log-likelihood of integer targets under row-wise softmax."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects n x C logits, got {logits.shape}")
    target = np.asarray(target, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if target.shape[0] != n:
        raise ShapeError(f"{n} logit rows but {target.shape[0]} targets")
    if np.any(target < 0) or np.any(target >= c):
        raise IndexError(f"target out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, target].mean()

    def bw(g):
        p = np.exp(logp)
        p[rows, target] -= 1.0
        _accum(logits, g * p / n)
    return _result(loss, (logits,), bw)


# backward ---------------------------------------------------------------

def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable leaf tensor."""
    if loss.data.size != 1 or loss.ndim != 0:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    for node in order:
        if node._backward is not None:
            node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
