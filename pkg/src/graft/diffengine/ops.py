"""Primitive differentiable ops.

Each op is a (forward, backward) pair over numpy arrays.  ``backward``
receives the upstream gradient, the op's output and the parent values, and
returns one gradient (or ``None``) per parent.
"""
from __future__ import annotations

import numpy as np

from graft import kernels
from graft.diffengine.tape import Tensor, active_tape
from graft.errors import ValidationError
from graft.kernels import Segments


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(forward, backward, *parents) -> Tensor:
    parents = tuple(as_tensor(p) for p in parents)
    out = Tensor(forward(*(p.value for p in parents)))
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, forward, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    def fwd(x, y):
        return x + y

    def bwd(g, out, x, y):
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return _apply(fwd, bwd, a, b)


def sub(a, b) -> Tensor:
    def fwd(x, y):
        return x - y

    def bwd(g, out, x, y):
        return _unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)

    return _apply(fwd, bwd, a, b)


def mul(a, b) -> Tensor:
    def fwd(x, y):
        return x * y

    def bwd(g, out, x, y):
        return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)

    return _apply(fwd, bwd, a, b)


def scale(a, c: float) -> Tensor:
    c = float(c)
    return _apply(lambda x: x * c, lambda g, out, x: (g * c,), a)


def matmul(a, b) -> Tensor:
    def fwd(x, y):
        return kernels.matmul(x, y)

    def bwd(g, out, x, y):
        return kernels.matmul(g, y.T), kernels.matmul(x.T, g)

    return _apply(fwd, bwd, a, b)


def transpose(a) -> Tensor:
    return _apply(lambda x: x.T.copy(), lambda g, out, x: (g.T.copy(),), a)


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    return _apply(_sigmoid, lambda g, out, x: (g * out * (1.0 - out),), a)


def relu(a) -> Tensor:
    return _apply(lambda x: np.maximum(x, 0.0), lambda g, out, x: (g * (x > 0),), a)


def softmax(a) -> Tensor:
    """Softmax along the last axis with max subtraction."""

    def fwd(x):
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def bwd(g, y, x):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _apply(fwd, bwd, a)


def segment_softmax(scores, seg: Segments) -> Tensor:
    """Softmax of an (M, 1) column within each segment; empty segments are skipped."""
    ids = seg.ids

    def fwd(s):
        s = s[:, 0]
        e = np.exp(s - kernels.segment_max(s, seg)[ids])
        den = kernels.segment_sum(e[:, None], seg)[:, 0]
        return (e / den[ids])[:, None]

    def bwd(g, y, s):
        dot = kernels.segment_sum(g * y, seg)[:, 0]
        return (y * (g - dot[ids][:, None]),)

    return _apply(fwd, bwd, scores)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def fwd(*xs):
        return np.concatenate(xs, axis=axis)

    def bwd(g, out, *xs):
        return tuple(np.split(g, bounds, axis=axis))

    return _apply(fwd, bwd, *tensors)


def gather(a, index: np.ndarray) -> Tensor:
    """Rows ``a[index]``."""
    index = np.asarray(index, dtype=np.int64)

    def bwd(g, out, x):
        return (kernels.scatter_add(g, index, x.shape[0]),)

    return _apply(lambda x: x[index], bwd, a)


def segment_sum(a, seg: Segments) -> Tensor:
    return _apply(lambda x: kernels.segment_sum(x, seg), lambda g, out, x: (g[seg.ids],), a)


def segment_mean(a, seg: Segments) -> Tensor:
    denom = np.maximum(seg.sizes, 1).astype(np.float64)[:, None]

    def fwd(x):
        return kernels.segment_sum(x, seg) / denom

    def bwd(g, out, x):
        return ((g / denom)[seg.ids],)

    return _apply(fwd, bwd, a)


def total(a) -> Tensor:
    """Sum of all entries (scalar)."""
    return _apply(lambda x: np.asarray(x.sum()), lambda g, out, x: (np.full_like(x, g),), a)


def masked_bce(logits, labels: np.ndarray) -> Tensor:
    """Binary cross-entropy with logits; NaN labels are missing.

    Each graph contributes the mean over its labelled tasks; the result is the
    mean over graphs that have at least one label.
    """
    labels = np.asarray(labels, dtype=np.float64)
    mask = ~np.isnan(labels)
    per_graph = mask.sum(axis=-1, keepdims=True)
    valid = per_graph[..., 0] > 0
    if not valid.any():
        raise ValidationError("all labels missing in batch")
    weight = np.where(mask, 1.0 / np.maximum(per_graph, 1), 0.0) / valid.sum()
    y = np.where(mask, labels, 0.0)

    def fwd(z):
        elem = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
        return np.asarray((weight * elem).sum())

    def bwd(g, out, z):
        return (g * weight * (_sigmoid(z) - y),)

    return _apply(fwd, bwd, logits)
