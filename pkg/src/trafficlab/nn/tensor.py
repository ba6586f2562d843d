"""Reverse-mode autodiff over numpy arrays.

A ``Graph`` records the operations of one forward pass in execution order
(which is already a topological order) and replays them backwards to
accumulate gradients.  Everything runs in float64 by default; inference code
may feed float32 arrays and the ops follow numpy's promotion rules.

Ops work on arbitrary leading batch dimensions.  When no graph is active the
ops just compute, so the same network code serves training and inference.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    """A value in the compute graph. Wraps an ndarray, optionally with a grad."""

    __slots__ = ("data", "grad", "requires_grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # arithmetic sugar; heavy lifting lives in the module-level ops
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

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a constant reciprocal")
        return mul(self, 1.0 / other)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor | None], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Graph:
    """Tape for one forward pass.

    Use as a context manager around the forward computation, then call
    :meth:`backward` with the scalar loss.  Gradients are accumulated into the
    ``grad`` attribute of every leaf tensor with ``requires_grad``.
    """

    _active: "Graph | None" = None

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Graph":
        if Graph._active is not None:
            raise RuntimeError("graphs do not nest")
        Graph._active = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        Graph._active = None

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf."""
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        if loss.is_leaf:
            if loss.requires_grad:
                g = np.ones_like(loss.data)
                loss.grad = g if loss.grad is None else loss.grad + g
            return
        flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            g_out = flowing.pop(id(node.out), None)
            if g_out is None:
                continue
            grads = node.backward(g_out)
            for t, g in zip(node.inputs, grads):
                if t is None or g is None or not t.requires_grad:
                    continue
                if t.is_leaf:
                    t.grad = g if t.grad is None else t.grad + g
                elif id(t) in flowing:
                    flowing[id(t)] = flowing[id(t)] + g
                else:
                    flowing[id(t)] = g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _record(out: Tensor, inputs: Sequence[Tensor | None], backward: Callable) -> Tensor:
    out.is_leaf = False
    out.requires_grad = any(t is not None and t.requires_grad for t in inputs)
    g = Graph._active
    if g is not None and out.requires_grad:
        g._nodes.append(_Node(out, inputs, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), backward)


def square(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data * x.data)
    return _record(out, (x,), lambda g: (2.0 * x.data * g,))


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    root = np.sqrt(x.data)
    out = Tensor(root)
    return _record(out, (x,), lambda g: (g * 0.5 / root,))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    e = np.exp(x.data)
    out = Tensor(e)
    return _record(out, (x,), lambda g: (g * e,))


def log(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.log(x.data))
    return _record(out, (x,), lambda g: (g / x.data,))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    return _record(out, (x,), lambda g: (np.where(mask, g, 0.0),))


# ---------------------------------------------------------------------------
# shape ops


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(x.data.shape),))


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    ts = [_as_tensor(x) for x in xs]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(ts), backward)


def repeat(x, k: int, axis: int = 0) -> Tensor:
    """Repeat each slice along ``axis`` k times (np.repeat semantics)."""
    x = _as_tensor(x)
    out = Tensor(np.repeat(x.data, k, axis=axis))

    def backward(g):
        moved = np.moveaxis(g, axis, 0)
        folded = moved.reshape((x.data.shape[axis], k) + moved.shape[1:]).sum(axis=1)
        return (np.moveaxis(folded, 0, axis),)

    return _record(out, (x,), backward)


def take(x, index: int, axis: int) -> Tensor:
    """Select one slice along ``axis`` (e.g. the target agent row)."""
    x = _as_tensor(x)
    out = Tensor(np.take(x.data, index, axis=axis))

    def backward(g):
        gx = np.zeros_like(x.data)
        sl = [slice(None)] * x.data.ndim
        sl[axis] = index
        gx[tuple(sl)] = g
        return (gx,)

    return _record(out, (x,), backward)


def select_index(x, idx: np.ndarray, axis: int = 1) -> Tensor:
    """Per-row gather: out[b] = x[b, idx[b]] along ``axis`` (idx is constant)."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.shape != x.data.shape[:1]:
        raise ValueError(f"index shape {idx.shape} does not match batch {x.data.shape[:1]}")
    expanded = idx.reshape(idx.shape + (1,) * (x.data.ndim - 1))
    out = Tensor(np.take_along_axis(x.data, expanded, axis=axis).squeeze(axis))

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, expanded, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _record(out, (x,), backward)


# ---------------------------------------------------------------------------
# reductions


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _record(out, (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.data.shape[a] for a in axes]))
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def cumsum(x, axis: int) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.cumsum(x.data, axis=axis))

    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis),)

    return _record(out, (x,), backward)


def max_pool_over_set(x, mask: np.ndarray | None, axis: int) -> Tensor:
    """Max over a set axis; masked entries are excluded from pooling.

    ``mask`` is a boolean ndarray matching ``x``'s shape up to ``axis``
    (broadcast over trailing feature dims).  Rows whose set is entirely
    masked pool to zero; callers that must reject empty sets check masks
    before pooling.
    """
    x = _as_tensor(x)
    if axis < 0:
        axis += x.data.ndim
    if mask is None:
        mask = np.ones(x.data.shape[: axis + 1], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.data.shape[: axis + 1]:
        raise ValueError(f"mask shape {mask.shape} does not match set shape {x.data.shape[: axis + 1]}")
    full_mask = mask.reshape(mask.shape + (1,) * (x.data.ndim - mask.ndim))
    masked = np.where(full_mask, x.data, -np.inf)
    raw = masked.max(axis=axis)
    empty = ~mask.any(axis=axis)
    if empty.any():
        raw = np.where(empty.reshape(empty.shape + (1,) * (raw.ndim - empty.ndim)), 0.0, raw)
    out = Tensor(raw)
    argmax = masked.argmax(axis=axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        idx = np.expand_dims(argmax, axis)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        if empty.any():
            dead = empty.reshape(empty.shape + (1,) * (gx.ndim - empty.ndim))
            gx = np.where(dead, 0.0, gx)
        return (gx,)

    return _record(out, (x,), backward)


# ---------------------------------------------------------------------------
# layers


def dense(x, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on the last axis: y = x @ w + b."""
    x = _as_tensor(x)
    if w.data.ndim != 2 or x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(f"dense shape mismatch: x {x.data.shape} vs w {w.data.shape}")
    y = x.data @ w.data
    if b is not None:
        if b.data.shape != (w.data.shape[1],):
            raise ValueError(f"dense bias shape {b.data.shape} does not match {w.data.shape[1]}")
        y = y + b.data
    out = Tensor(y)

    def backward(g):
        g2d = g.reshape(-1, g.shape[-1])
        x2d = x.data.reshape(-1, x.data.shape[-1])
        gx = g @ w.data.T
        gw = x2d.T @ g2d
        gb = g2d.sum(axis=0) if b is not None else None
        return (gx, gw, gb)

    return _record(out, (x, w, b), backward)


def layernorm(x, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    x = _as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat)

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return _record(out, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def backward(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _record(out, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = Tensor(y)

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), backward)
