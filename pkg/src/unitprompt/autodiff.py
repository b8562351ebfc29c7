"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tensors wrap ndarrays and record the ops that produced them; backward()
walks the graph in reverse topological order accumulating gradients.
Only what the model needs is implemented: broadcasting arithmetic,
matmul, reductions, shape ops, softmax/log-softmax/layer-norm/GELU
primitives, embedding lookup, and gather along the last axis.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (eval-mode forward passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad over the axes that broadcasting expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "name", "frozen", "_prev", "_backward")

    def __init__(self, data, name: str = "", frozen: bool = False):
        if isinstance(data, np.ndarray):
            self.data = data
        elif isinstance(data, np.generic):
            self.data = np.asarray(data)  # keep numpy scalar dtypes (reduction results)
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.name = name
        self.frozen = frozen
        self._prev = ()
        self._backward = None

    # -- graph plumbing ------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        # First contribution is held by reference; later ones allocate a
        # fresh sum. Backward closures never mutate arrays they hand off,
        # so sharing the first buffer is safe and skips a zeros+add pass.
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.ndim != 0:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        visited = {id(self)}
        stack = [(self, iter(self._prev))]
        while stack:
            node, children = stack[-1]
            for child in children:
                if id(child) not in visited:
                    visited.add(id(child))
                    stack.append((child, iter(child._prev)))
                    break
            else:
                topo.append(node)
                stack.pop()
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, dtype={self.data.dtype})"

    # -- operators -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, mul(other, -1.0))
        # keep python scalars weak so float32 graphs stay float32
        return add(self, np.negative(other) if isinstance(other, np.ndarray) else -other)

    def __rsub__(self, other):
        return add(-self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return take_slice(self, key)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def _make(data, prev, backward):
    out = Tensor(data)
    if _GRAD_ENABLED:
        out._prev = tuple(p for p in prev if isinstance(p, Tensor))
        out._backward = backward
    return out


def _data(x):
    return x.data if isinstance(x, Tensor) else x


# -- arithmetic --------------------------------------------------------


def add(a, b):
    bd = _data(b)
    out_data = a.data + bd

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        if isinstance(b, Tensor):
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b):
    bd = _data(b)
    out_data = a.data * bd

    def backward(g):
        a._accumulate(_unbroadcast(g * bd, a.data.shape))
        if isinstance(b, Tensor):
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def power(a, exponent: float):
    out_data = a.data ** exponent

    def backward(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1))

    return _make(out_data, (a,), backward)


def matmul(a, b):
    ad, bd = _data(a), _data(b)
    out_data = ad @ bd

    def backward(g):
        if isinstance(a, Tensor):
            ga = g @ bd.swapaxes(-1, -2)
            a._accumulate(_unbroadcast(ga, ad.shape))
        if isinstance(b, Tensor):
            gb = ad.swapaxes(-1, -2) @ g
            b._accumulate(_unbroadcast(gb, bd.shape))

    return _make(out_data, (a, b), backward)


def exp(a):
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), backward)


def log(a):
    out_data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _make(out_data, (a,), backward)


def tanh(a):
    out_data = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward)


def relu(a):
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        a._accumulate(np.where(a.data > 0, g, 0.0))

    return _make(out_data, (a,), backward)


# -- reductions and shapes ----------------------------------------------


def tensor_sum(a, axis=None, keepdims=False):
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _make(out_data, (a,), backward)


def tensor_mean(a, axis=None, keepdims=False):
    scale = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(scale))


def reshape(a, shape):
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _make(out_data, (a,), backward)


def swapaxes(a, ax1, ax2):
    out_data = a.data.swapaxes(ax1, ax2)

    def backward(g):
        a._accumulate(g.swapaxes(ax1, ax2))

    return _make(out_data, (a,), backward)


def broadcast_to(a, shape):
    out_data = np.broadcast_to(a.data, shape)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))

    return _make(out_data, (a,), backward)


def take_slice(a, key):
    """Basic (slice/int/ellipsis) indexing."""
    out_data = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        a._accumulate(full)

    return _make(out_data, (a,), backward)


def concat(tensors, axis=0):
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(g[tuple(idx)])

    return _make(out_data, tuple(tensors), backward)


# -- model primitives ----------------------------------------------------


def embedding(table, indices):
    """Row lookup table[indices]; indices is a plain integer ndarray."""
    indices = np.asarray(indices)
    out_data = table.data[indices]

    def backward(g):
        # scatter into a private buffer; _accumulate may share arrays, so
        # in-place np.add.at on table.grad is not safe in general
        scattered = np.zeros_like(table.data)
        np.add.at(scattered, indices, g)
        table._accumulate(scattered)

    return _make(out_data, (table,), backward)


def softmax(a, axis=-1, additive_mask=None):
    """Softmax along one axis, optionally fused with a constant additive
    mask (e.g. 0 / -1e30 causal masking); fusing avoids materializing a
    separate masked copy of large attention score arrays."""
    if additive_mask is not None:
        out_data = a.data + additive_mask
        out_data -= out_data.max(axis=axis, keepdims=True)
    else:
        out_data = a.data - a.data.max(axis=axis, keepdims=True)
    np.exp(out_data, out=out_data)
    out_data /= out_data.sum(axis=axis, keepdims=True)

    def backward(g):
        if axis in (-1, g.ndim - 1):
            dot = np.expand_dims(np.einsum("...k,...k->...", g, out_data), -1)
        else:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
        ga = g - dot
        ga *= out_data
        a._accumulate(ga)

    return _make(out_data, (a,), backward)


def log_softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def backward(g):
        a._accumulate(g - np.exp(out_data) * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        gxhat = g * gain.data
        dx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        x._accumulate(dx)
        reduce_axes = tuple(range(g.ndim - 1))
        gain._accumulate((g * xhat).sum(axis=reduce_axes))
        bias._accumulate(g.sum(axis=reduce_axes))

    return _make(out_data, (x, gain, bias), backward)


def take_along_last(a, indices):
    """out[..., i] = a[..., i, indices[i]] for a (B, C) tensor; used to pick
    the label logit per batch row."""
    indices = np.asarray(indices)
    rows = np.arange(a.data.shape[0])
    out_data = a.data[rows, indices]

    def backward(g):
        scattered = np.zeros_like(a.data)
        scattered[rows, indices] = g  # (row, index) pairs are unique
        a._accumulate(scattered)

    return _make(out_data, (a,), backward)


def dropout(x, p: float, rng: np.random.Generator):
    """Inverted dropout with a mask drawn from rng; the mask lives in the
    graph closure, so backward replays it exactly."""
    if p <= 0.0:
        return x
    draw = rng.random(x.data.shape, dtype=x.data.dtype if x.data.dtype == np.float32 else np.float64)
    mask = (draw >= p).astype(x.data.dtype) / (1.0 - p)
    return mul(x, mask)
