"""Minimal dense tensor with reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays. Every differentiable op records its
inputs and a backward closure on the output tensor; calling backward() on
a scalar walks the recorded graph in reverse topological order and
accumulates gradients into every requires_grad tensor. The graph is
rebuilt eagerly on each forward pass and dropped after backward().
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """An operation precondition was violated."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    # make `ndarray <op> Tensor` dispatch to our reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        """Populate .grad on every requires_grad tensor reachable from self.

        self must be a scalar (size 1). Gradients accumulate additively
        across the multiple uses of a tensor. The recorded graph is
        released afterwards.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: keep the accumulated gradient
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, contrib in node._backward(g):
                if not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + contrib
                else:
                    grads[pid] = contrib
            node._parents = ()
            node._backward = None


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Reduce grad (shape of a broadcast result) back to the given shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        )

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        return (
            (a, _unbroadcast(g / b.data, a.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        )

    return _make(a.data / b.data, (a, b), bw)


def neg(a):
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: ((a, -g),))


def matmul(a, b):
    """Matrix product; batch dimensions broadcast like np.matmul."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ((a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape)))

    return _make(a.data @ b.data, (a, b), bw)


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0

    def bw(g):
        return ((a, g * mask),)

    return _make(np.maximum(a.data, 0.0), (a,), bw)


def exp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def bw(g):
        return ((a, g * out_data),)

    return _make(out_data, (a,), bw)


def log(a):
    a = _as_tensor(a)

    def bw(g):
        return ((a, g / a.data),)

    return _make(np.log(a.data), (a,), bw)


def sqrt(a):
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def bw(g):
        return ((a, g / (2.0 * out_data)),)

    return _make(out_data, (a,), bw)


def clip(a, lo, hi):
    """Clamp values to [lo, hi]; gradient is passed only where unclipped."""
    a = _as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        return ((a, g * mask),)

    return _make(np.clip(a.data, lo, hi), (a,), bw)


def reshape(a, shape):
    a = _as_tensor(a)

    def bw(g):
        return ((a, g.reshape(a.shape)),)

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a, axes):
    a = _as_tensor(a)
    inverse = np.argsort(axes)

    def bw(g):
        return ((a, g.transpose(inverse)),)

    return _make(a.data.transpose(axes), (a,), bw)


def sum_axis(a, axis=None, keepdims=False):
    a = _as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, a.shape).copy()),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def mean_axis(a, axis, keepdims=False):
    a = _as_tensor(a)
    n = a.shape[axis]
    return sum_axis(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def softmax_lastdim(a):
    """Softmax over the last dimension, computed with max subtraction."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return ((a, out_data * (g - dot)),)

    return _make(out_data, (a,), bw)


def masked_softmax(a, mask):
    """Softmax over the last dimension restricted to mask==True positions.

    Masked positions get probability exactly 0. A slice with no unmasked
    entry is a contract violation (it signals an upstream masking bug).
    """
    a = _as_tensor(a)
    m = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    if not m.any(axis=-1).all():
        raise ContractError("masked_softmax: a slice has every position masked")
    neg = np.where(m, a.data, -np.inf)
    shifted = neg - neg.max(axis=-1, keepdims=True)
    e = np.where(m, np.exp(shifted), 0.0)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return ((a, out_data * (g - dot)),)

    return _make(out_data, (a,), bw)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize the last dimension to zero mean / unit variance, then affine."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    if gain.shape[-1] != a.shape[-1] or bias.shape[-1] != a.shape[-1]:
        raise ShapeError(
            f"layer_norm gain/bias length must equal last dim {a.shape[-1]}"
        )
    mu = mean_axis(a, axis=-1, keepdims=True)
    centered = a - mu
    var = mean_axis(centered * centered, axis=-1, keepdims=True)
    normed = centered / sqrt(var + eps)
    return normed * gain + bias


def embedding_rows(table, ids):
    """Gather rows of a 2-D table; backward scatter-adds into the table."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding id out of range [0, {table.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return ((table, gt),)

    return _make(table.data[ids], (table,), bw)


def cosine_sim(u, v):
    """Cosine similarity of two vectors; both must be nonzero."""
    u, v = _as_tensor(u), _as_tensor(v)
    if np.linalg.norm(u.data) == 0.0 or np.linalg.norm(v.data) == 0.0:
        raise ContractError("cosine_sim: zero-norm vector")
    dot = sum_axis(u * v)
    nu = sqrt(sum_axis(u * u))
    nv = sqrt(sum_axis(v * v))
    return dot / (nu * nv)


def normalize_rows(a, eps=0.0):
    """Scale each row (last dim) to unit L2 norm."""
    a = _as_tensor(a)
    norms = np.sqrt((a.data * a.data).sum(axis=-1))
    if (norms == 0.0).any():
        raise ContractError("normalize_rows: zero-norm row")
    n = sqrt(sum_axis(a * a, axis=-1, keepdims=True) + eps)
    return a / n
