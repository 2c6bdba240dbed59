"""Dense tensors with reverse-mode gradient computation.

Float32 is the training precision; pass float64 arrays (or build modules in
float64) when checking gradients against finite differences.
"""
from __future__ import annotations

import contextlib

import numpy as np

from .errors import ConfigurationError

DEFAULT_DTYPE = np.float32

# When a list is installed here, relu and the triplet hinge append the
# smallest |pre-activation| they saw, so callers can reject configurations
# that sit too close to a non-differentiable kink.
_kink_margins = None

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Skip graph construction inside the block (evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def record_kink_margins(out):
    global _kink_margins
    prev = _kink_margins
    _kink_margins = out
    try:
        yield out
    finally:
        _kink_margins = prev


def _note_kink(values):
    if _kink_margins is not None and values.size:
        _kink_margins.append(float(np.min(np.abs(values))))


def _as_array(value, dtype=None):
    arr = np.asarray(value)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(dtype or DEFAULT_DTYPE)
    elif dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return arr


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    # -- plumbing ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += grad

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ConfigurationError("backward() without grad requires a scalar")
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        # interior nodes may hold gradients from an earlier backward over a
        # shared graph; only leaves accumulate across calls
        for node in topo:
            if node._backward is not None:
                node.grad = None
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def _make(data, parents, backward):
    out = Tensor(data)
    needs = _grad_enabled and any(p.requires_grad or p._parents for p in parents)
    if needs:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape).astype(b.data.dtype))

    return _make(data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape).astype(a.data.dtype))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape).astype(b.data.dtype))

    return _make(data, (a, b), backward)


def power(a, exponent):
    a = as_tensor(a)
    data = a.data ** exponent

    def backward(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1.0))

    return _make(data, (a,), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ConfigurationError("matmul requires rank >= 2 operands")
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        a._accumulate(_unbroadcast(ga, a.data.shape))
        b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward)


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _make(data, (a,), backward)


def transpose(a, axes=None):
    a = as_tensor(a)
    data = a.data.transpose(axes)

    def backward(g):
        inv = None if axes is None else np.argsort(axes)
        a._accumulate(g.transpose(inv))

    return _make(data, (a,), backward)


def slice_(a, key):
    a = as_tensor(a)
    data = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        # basic (non-integer-array) keys never alias, so += suffices
        if isinstance(key, tuple):
            fancy = any(isinstance(k, np.ndarray) for k in key)
        else:
            fancy = isinstance(key, np.ndarray)
        if fancy:
            np.add.at(full, key, g)
        else:
            full[key] += g
        a._accumulate(full)

    return _make(data, (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(g[tuple(idx)])

    return _make(data, tensors, backward)


def take_rows(table, indices):
    """Row gather, e.g. embedding lookup; backward scatter-adds."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    data = table.data[idx]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accumulate(full)

    return _make(data, (table,), backward)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).astype(a.data.dtype))

    return _make(data, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis, keepdims), 1.0 / count)


def relu(a):
    a = as_tensor(a)
    _note_kink(a.data)
    mask = a.data > 0
    data = a.data * mask

    def backward(g):
        a._accumulate(g * mask)

    return _make(data, (a,), backward)


def exp(a):
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * data)

    return _make(data, (a,), backward)


def log(a):
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _make(data, (a,), backward)


def sqrt(a):
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / data)

    return _make(data, (a,), backward)


def log_sigmoid(a):
    """Numerically stable log(sigmoid(x))."""
    a = as_tensor(a)
    data = -np.logaddexp(0.0, -a.data)

    def backward(g):
        # d/dx log sigmoid(x) = sigmoid(-x)
        a._accumulate(g * np.exp(-np.logaddexp(0.0, a.data)))

    return _make(data, (a,), backward)


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        a._accumulate(data * (g - dot))

    return _make(data, (a,), backward)


def layer_norm(x, gain, bias, eps=1e-8):
    """Normalize over the last axis, then scale/shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gain.data + bias.data

    def backward(g):
        gain._accumulate(_unbroadcast(g * xhat, gain.data.shape))
        bias._accumulate(_unbroadcast(g, bias.data.shape))
        gx = g * gain.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        x._accumulate((inv * (gx - m1 - xhat * m2)).astype(x.data.dtype))

    return _make(data, (x, gain, bias), backward)


def cosine_similarity(a, b, guard=1e-12):
    """Row-wise cosine over the last axis; 0 (with zero gradient) if either
    row norm falls below `guard`."""
    a, b = as_tensor(a), as_tensor(b)
    na = np.linalg.norm(a.data, axis=-1, keepdims=True)
    nb = np.linalg.norm(b.data, axis=-1, keepdims=True)
    # the zero-norm guard is a discontinuity; expose the distance to it so
    # gradient checks can resample away from near-zero rows
    _note_kink(na)
    _note_kink(nb)
    ok = (na > guard) & (nb > guard)
    safe_na = np.where(ok, na, 1.0)
    safe_nb = np.where(ok, nb, 1.0)
    dot = (a.data * b.data).sum(axis=-1, keepdims=True)
    cos = np.where(ok, dot / (safe_na * safe_nb), 0.0)
    data = cos[..., 0]

    def backward(g):
        g = np.expand_dims(g, -1)
        ga = np.where(ok, b.data / (safe_na * safe_nb) - cos * a.data / (safe_na**2), 0.0)
        gb = np.where(ok, a.data / (safe_na * safe_nb) - cos * b.data / (safe_nb**2), 0.0)
        a._accumulate((g * ga).astype(a.data.dtype))
        b._accumulate((g * gb).astype(b.data.dtype))

    return _make(data, (a, b), backward)


def dropout(a, p, rng, training=True):
    a = as_tensor(a)
    if not training or p <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return mul(a, Tensor(keep))
