"""Hot-loop kernels with a compiled core and a pure numpy fallback.

The compiled extension ``graft._kernels`` is used when it was built and
``GRAFT_PURE_PYTHON`` is unset.  Both backends accumulate in the same order
and agree bit for bit.

Why not BLAS: a BLAS product may round a row differently depending on where
the row sits in the matrix, which breaks exact permutation invariance and
batch independence of graph logits.  Segment sums are taken in ascending
value order for the same reason: the result cannot depend on node or edge
numbering.
"""
from __future__ import annotations

import os

import numpy as np

from graft import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if not os.environ.get("GRAFT_PURE_PYTHON"):
    try:
        from graft import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py


class Segments:
    """Grouping of M rows into ``count`` segments (edges by destination, nodes by graph)."""

    __slots__ = ("ids", "count", "order", "offsets", "sizes", "slot", "max_size")

    def __init__(self, ids, count: int):
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= count):
            raise ValueError("segment id out of range")
        self.ids = ids
        self.count = int(count)
        self.order = np.argsort(ids, kind="stable").astype(np.int64)
        self.sizes = np.bincount(ids, minlength=self.count).astype(np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.int64)
        self.slot = np.empty_like(ids)
        self.slot[self.order] = np.arange(ids.size) - np.repeat(self.offsets[:-1], self.sizes)
        self.max_size = int(self.sizes.max()) if self.count else 0


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _impl.matmul(_c(a), _c(b))


def segment_sum(v: np.ndarray, seg: Segments) -> np.ndarray:
    """Sum rows of ``v`` (M, C) per segment; order-canonical."""
    v = _c(v)
    if _impl is _kernels_py:
        return _kernels_py.segment_sum(v, seg.order, seg.offsets, seg.max_size,
                                       ids=seg.ids, slot=seg.slot)
    return _impl.segment_sum(v, seg.order, seg.offsets, seg.max_size)


def segment_max(v: np.ndarray, seg: Segments) -> np.ndarray:
    return _impl.segment_max(_c(v).reshape(-1), seg.order, seg.offsets)


def scatter_add(v: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    index = np.ascontiguousarray(index, dtype=np.int64)
    return _impl.scatter_add(_c(v), index, int(n))
