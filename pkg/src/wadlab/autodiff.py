"""Minimal reverse-mode automatic differentiation over numpy arrays.

Covers exactly the op set the two classifiers and the two loss terms need:
elementwise arithmetic, matmul, activations, reductions, slicing, concat,
embedding lookup, 1-D convolution via im2col, global max over an axis, a
fused softmax cross-entropy, and row-wise L2 distance. Everything runs in
float64 so finite-difference checks are tight.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
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
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)

    def sum(self, axis=None):
        return tsum(self, axis=axis)

    def mean(self):
        return mul(tsum(self), 1.0 / self.data.size)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g):
    if not t.requires_grad and t._backward is None and not t._parents:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Reduce gradient g back to the given broadcasted-from shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _make(a.data.sum(axis=axis), (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return _make(a.data * mask, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)

    def backward(g):
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - out * out))

    return _make(out, (a,), backward)


def tslice(a, key) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        _accum(a, full)

    return _make(a.data[key], (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def embedding(table, ids) -> Tensor:
    """Row gather: table [V, D], ids int array [...] -> [..., D]."""
    table = as_tensor(table)
    ids = np.asarray(ids)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        _accum(table, full)

    return _make(table.data[ids], (table,), backward)


def conv1d(x, weight, bias, width: int) -> Tensor:
    """Valid 1-D convolution over the token axis.

    x: [B, T, D]; weight: [width * D, F]; bias: [F] -> [B, T - width + 1, F].
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    B, T, D = x.data.shape
    P = T - width + 1
    if P < 1:
        raise ValueError(f"sequence length {T} shorter than filter width {width}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, width, axis=1)
    # windows: [B, P, D, width] -> im2col [B * P, width * D]
    cols = windows.transpose(0, 1, 3, 2).reshape(B * P, width * D)
    out = (cols @ weight.data + bias.data).reshape(B, P, -1)

    def backward(g):
        gf = g.reshape(B * P, -1)
        _accum(weight, cols.T @ gf)
        _accum(bias, gf.sum(axis=0))
        gcols = (gf @ weight.data.T).reshape(B, P, width, D)
        gx = np.zeros_like(x.data)
        for w in range(width):
            gx[:, w : w + P, :] += gcols[:, :, w, :]
        _accum(x, gx)

    return _make(out, (x, weight, bias), backward)


def max_over_axis(a, axis: int) -> Tensor:
    """Max reduction routing gradient to the first argmax (deterministic)."""
    a = as_tensor(a)
    idx = a.data.argmax(axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(
            full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis
        )
        _accum(a, full)

    return _make(out, (a,), backward)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy over the batch, fused with a stable softmax."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if not np.isfinite(logits.data).all():
        raise FloatingPointError("non-finite logits in cross-entropy")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    B = logits.data.shape[0]
    picked = probs[np.arange(B), labels]
    loss = -np.log(np.maximum(picked, 1e-300)).mean()

    def backward(g):
        grad = probs.copy()
        grad[np.arange(B), labels] -= 1.0
        _accum(logits, g * grad / B)

    return _make(loss, (logits,), backward)


def l2_rows(a, b) -> Tensor:
    """Row-wise Euclidean distance between [B, D] tensors; zero rows get zero grad."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    dist = np.sqrt((diff * diff).sum(axis=1))

    def backward(g):
        safe = np.where(dist > 0, dist, 1.0)
        gd = (g / safe)[:, None] * diff
        gd[dist == 0] = 0.0
        _accum(a, gd)
        _accum(b, -gd)

    return _make(dist, (a, b), backward)
