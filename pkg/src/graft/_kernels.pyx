# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every routine accumulates in a fixed, documented order so that the pure
numpy twin in ``_kernels_py`` returns bit-identical results.  Build with
``-ffp-contract=off``: a fused multiply-add would change the rounding.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t idx_t


def matmul(const double[:, ::1] a, const double[:, ::1] b):
    """Row-independent product: ``out[i, j] = sum_k a[i, k] * b[k, j]``, k ascending."""
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], p = b.shape[1]
    if b.shape[0] != m:
        raise ValueError(f"matmul shape mismatch: ({n}, {m}) @ ({b.shape[0]}, {p})")
    out = np.zeros((n, p), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, k, j
    cdef double aik
    with nogil:
        for i in range(n):
            for k in range(m):
                aik = a[i, k]
                for j in range(p):
                    o[i, j] = o[i, j] + aik * b[k, j]
    return out


def segment_sum(const double[:, ::1] v, const idx_t[::1] order,
                const idx_t[::1] offsets, Py_ssize_t max_size):
    """Per-segment column sums, each summed in ascending value order."""
    cdef Py_ssize_t n_seg = offsets.shape[0] - 1, n_col = v.shape[1]
    out = np.zeros((n_seg, n_col), dtype=np.float64)
    buf_arr = np.empty(max(max_size, 1), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[::1] buf = buf_arr
    cdef Py_ssize_t s, c, t, u, lo, cnt
    cdef double x, acc
    with nogil:
        for s in range(n_seg):
            lo = offsets[s]
            cnt = offsets[s + 1] - lo
            for c in range(n_col):
                for t in range(cnt):
                    x = v[order[lo + t], c]
                    u = t
                    while u > 0 and buf[u - 1] > x:
                        buf[u] = buf[u - 1]
                        u -= 1
                    buf[u] = x
                acc = 0.0
                for t in range(cnt):
                    acc = acc + buf[t]
                o[s, c] = acc
    return out


def segment_max(const double[::1] v, const idx_t[::1] order, const idx_t[::1] offsets):
    """Per-segment maximum of a vector; empty segments get 0."""
    cdef Py_ssize_t n_seg = offsets.shape[0] - 1
    out = np.zeros(n_seg, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t s, t
    cdef double best
    with nogil:
        for s in range(n_seg):
            if offsets[s + 1] == offsets[s]:
                continue
            best = v[order[offsets[s]]]
            for t in range(offsets[s] + 1, offsets[s + 1]):
                if v[order[t]] > best:
                    best = v[order[t]]
            o[s] = best
    return out


def scatter_add(const double[:, ::1] v, const idx_t[::1] index, Py_ssize_t n):
    """``out[index[r]] += v[r]`` for r ascending."""
    cdef Py_ssize_t rows = v.shape[0], n_col = v.shape[1]
    out = np.zeros((n, n_col), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t r, c, dst
    with nogil:
        for r in range(rows):
            dst = index[r]
            for c in range(n_col):
                o[dst, c] = o[dst, c] + v[r, c]
    return out
