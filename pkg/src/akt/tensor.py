"""Reverse-mode automatic differentiation over dense numpy arrays.

Each Tensor is a node of the computation tape: it stores its value, links to
its parents and a closure that routes the incoming adjoint to them. Calling
``backward()`` on a scalar walks the tape once in reverse topological order;
leaf gradients accumulate additively. Tests exercise everything in float64;
training normally runs in float32.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError, NumericsError, ShapeError

_grad_enabled = True


class no_grad:
    """Context manager that disables tape construction (inference paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # ---- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return mul(self, _wrap(1.0 / float(scalar), self.dtype))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    # ---- backward pass --------------------------------------------------

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without an explicit gradient "
                                 "requires a scalar output")
            grad = np.ones_like(self.data)
        order = _toposort(self)
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _toposort(root):
    # Iterative post-order DFS; each recorded node is visited exactly once.
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _wrap(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _unbroadcast(grad, shape):
    """Sum an adjoint back down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(tensor, grad):
    if not tensor.requires_grad:
        return
    grad = _unbroadcast(grad, tensor.data.shape)
    if tensor.grad is None:
        tensor.grad = grad
    else:
        tensor.grad = tensor.grad + grad


def _node(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---- primitives ----------------------------------------------------------


def add(a, b):
    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b):
    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _node(a.data - b.data, (a, b), backward)


def neg(a):
    def backward(g):
        _accumulate(a, -g)

    return _node(-a.data, (a,), backward)


def mul(a, b):
    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _node(a.data * b.data, (a, b), backward)


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul expects operands with at least 2 dimensions")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: "
                         f"{a.data.shape} x {b.data.shape}")

    def backward(g):
        _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _node(np.matmul(a.data, b.data), (a, b), backward)


def reshape(a, shape):
    old = a.data.shape

    def backward(g):
        _accumulate(a, g.reshape(old))

    return _node(a.data.reshape(shape), (a,), backward)


def transpose(a, axes):
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, np.transpose(g, inverse))

    return _node(np.transpose(a.data, axes), (a,), backward)


def concat(tensors, axis=-1):
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            _accumulate(t, piece)

    return _node(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward)


def tsum(a, axis=None, keepdims=False):
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def gather(table, indices):
    """Row lookup ``table[indices]``; the adjoint scatter-adds into the table."""
    idx = np.asarray(indices)

    def backward(g):
        if table.requires_grad:
            grad = np.zeros_like(table.data)
            np.add.at(grad, idx, g)
            _accumulate(table, grad)

    return _node(table.data[idx], (table,), backward)


def exp(a):
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return _node(out_data, (a,), backward)


def log(a):
    def backward(g):
        _accumulate(a, g / a.data)

    return _node(np.log(a.data), (a,), backward)


def sigmoid(a):
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), backward)


def softplus(a):
    out_data = np.logaddexp(0.0, a.data).astype(a.dtype, copy=False)

    def backward(g):
        _accumulate(a, g / (1.0 + np.exp(-a.data)))

    return _node(out_data, (a,), backward)


def softmax(x, axis=-1, mask=None):
    """Masked softmax along ``axis``.

    ``mask`` is boolean with True marking entries that participate. Masked
    entries come out exactly 0; a slice with no unmasked entry comes out
    all-zero rather than NaN.
    """
    data = x.data
    if mask is None:
        m = np.ones_like(data, dtype=bool)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
    top = np.amax(data, axis=axis, keepdims=True, initial=-np.inf, where=m)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(m, np.exp(data - top), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    out_data = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(x, out_data * (g - inner))

    return _node(out_data, (x,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    data = x.data
    mu = data.mean(axis=-1, keepdims=True)
    centered = data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = gain.data * xhat + bias.data
    n = data.shape[-1]

    def backward(g):
        if gain.requires_grad:
            reduce_axes = tuple(range(g.ndim - 1))
            _accumulate(gain, (g * xhat).sum(axis=reduce_axes))
        if bias.requires_grad:
            reduce_axes = tuple(range(g.ndim - 1))
            _accumulate(bias, g.sum(axis=reduce_axes))
        if x.requires_grad:
            dxhat = g * gain.data
            s1 = dxhat.sum(axis=-1, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
            _accumulate(x, inv / n * (n * dxhat - s1 - xhat * s2))

    return _node(out_data, (x, gain, bias), backward)


def dropout(x, rate, training, rng=None):
    """Zero entries with probability ``rate`` and rescale survivors.

    Identity when not training or when rate is 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs an rng")
    keep = (rng.random(x.data.shape) >= rate).astype(x.dtype)
    scale = 1.0 / (1.0 - rate)

    def backward(g):
        _accumulate(x, g * keep * scale)

    return _node(x.data * keep * scale, (x,), backward)


BCE_EPS = 1e-7


def binary_cross_entropy(pred, labels, mask=None):
    """Summed binary cross-entropy over unmasked positions.

    Returns the plain sum (callers divide by the count when they want the
    per-interaction average). Predictions are clamped to [1e-7, 1 - 1e-7].
    """
    labels = np.asarray(labels, dtype=pred.dtype)
    if mask is None:
        m = np.ones_like(pred.data, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise DataError("binary_cross_entropy: mask excludes every position")
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    terms = -(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))
    total = np.where(m, terms, 0.0).sum()
    inside = (pred.data > BCE_EPS) & (pred.data < 1.0 - BCE_EPS)

    def backward(g):
        dp = np.where(m & inside, (p - labels) / (p * (1.0 - p)), 0.0)
        _accumulate(pred, g * dp)

    return _node(np.asarray(total, dtype=pred.dtype), (pred,), backward)


# ---- initialization and verification --------------------------------------


def xavier_init(shape, rng, dtype=np.float64):
    """Uniform draw in +-sqrt(6 / (fan_in + fan_out)); returns a leaf parameter."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ShapeError("xavier_init needs at least one axis")
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        fan_in, fan_out = shape[0], shape[1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


def grad_check(fn, params, epsilon=1e-5):
    """Max relative error between tape gradients and central differences.

    ``fn`` rebuilds and returns the scalar loss from the current parameter
    values; ``params`` are the leaves to perturb (float64 required).
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise ConfigError("grad_check requires float64 parameters")
        p.grad = None
    out = fn()
    if not np.isfinite(out.data).all():
        raise NumericsError("grad_check: non-finite function output")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        for idx in np.ndindex(p.data.shape):
            saved = p.data[idx]
            with no_grad():
                p.data[idx] = saved + epsilon
                hi = float(fn().data)
                p.data[idx] = saved - epsilon
                lo = float(fn().data)
            p.data[idx] = saved
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericsError("grad_check: non-finite probe value")
            numeric = (hi - lo) / (2.0 * epsilon)
            denom = max(abs(ana[idx]), abs(numeric), 1e-8)
            worst = max(worst, abs(ana[idx] - numeric) / denom)
    return worst
