"""Pure numpy twin of ``_kernels.pyx``.

Each function reproduces the compiled accumulation order exactly, so both
backends return bit-identical arrays.
"""
from __future__ import annotations

import numpy as np


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, m = a.shape
    if b.shape[0] != m:
        raise ValueError(f"matmul shape mismatch: ({n}, {m}) @ ({b.shape[0]}, {b.shape[1]})")
    out = np.zeros((n, b.shape[1]), dtype=np.float64)
    for k in range(m):
        out += a[:, k : k + 1] * b[k]
    return out


def segment_sum(v, order, offsets, max_size, *, ids=None, slot=None) -> np.ndarray:
    n_seg = offsets.shape[0] - 1
    n_col = v.shape[1]
    out = np.zeros((n_seg, n_col), dtype=np.float64)
    if max_size == 0 or v.shape[0] == 0:
        return out
    if ids is None or slot is None:
        ids = np.empty(v.shape[0], dtype=np.int64)
        slot = np.empty(v.shape[0], dtype=np.int64)
        sizes = np.diff(offsets)
        ids[order] = np.repeat(np.arange(n_seg), sizes)
        slot[order] = np.arange(v.shape[0]) - np.repeat(offsets[:-1], sizes)
    dense = np.full((n_seg, max_size, n_col), np.inf)
    dense[ids, slot] = v
    dense.sort(axis=1)
    sizes = np.diff(offsets)
    for p in range(max_size):
        live = (sizes > p)[:, None]
        out += np.where(live, dense[:, p, :], 0.0)
    return out


def segment_max(v, order, offsets) -> np.ndarray:
    n_seg = offsets.shape[0] - 1
    out = np.full(n_seg, -np.inf)
    if v.shape[0]:
        sizes = np.diff(offsets)
        ids = np.repeat(np.arange(n_seg), sizes)
        np.maximum.at(out, ids, v[order])
    out[np.diff(offsets) == 0] = 0.0
    return out


def scatter_add(v, index, n) -> np.ndarray:
    out = np.zeros((n, v.shape[1]), dtype=np.float64)
    np.add.at(out, index, v)
    return out
