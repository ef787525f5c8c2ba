# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled row-selection kernels; same contract as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

BACKEND = "cython"

ctypedef fused real:
    float
    double


cdef void _select_row(real* row, Py_ssize_t c, Py_ssize_t k,
                      real* buf, long long* out) noexcept nogil:
    # bounded insertion: columns visited in order, an equal value never
    # displaces an earlier one, so ties resolve to the smaller index
    cdef Py_ssize_t n = 0, j, p
    cdef real v
    for j in range(c):
        v = row[j]
        if n == k:
            if not (v > buf[k - 1]):
                continue
            p = k - 1
        else:
            p = n
            n += 1
        while p > 0 and v > buf[p - 1]:
            buf[p] = buf[p - 1]
            out[p] = out[p - 1]
            p -= 1
        buf[p] = v
        out[p] = j


def _topk(real[:, ::1] m, Py_ssize_t k):
    cdef Py_ssize_t r = m.shape[0], c = m.shape[1], i
    cdef cnp.ndarray[long long, ndim=2] idx = np.empty((r, k), dtype=np.int64)
    cdef long long[:, ::1] iv = idx
    cdef real[::1] buf
    if real is float:
        buf = np.empty(k, dtype=np.float32)
    else:
        buf = np.empty(k, dtype=np.float64)
    if k == 0:
        return idx
    with nogil:
        for i in range(r):
            _select_row(&m[i, 0], c, k, &buf[0], &iv[i, 0])
    return idx


def topk_indices(m, Py_ssize_t k):
    m = np.ascontiguousarray(m)
    if k > m.shape[1]:
        k = m.shape[1]
    if m.shape[0] == 0:
        return np.empty((0, k), dtype=np.int64)
    return _topk(m, k)


def _scatter(real[:, ::1] values, long long[:, ::1] indices, real[:, ::1] out, bint check):
    cdef Py_ssize_t r = values.shape[0], k = values.shape[1], w = out.shape[1], i, j
    cdef long long col
    cdef int bad = 0
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] seen_arr = np.zeros(w if check else 1, dtype=np.uint8)
    cdef cnp.uint8_t[::1] seen = seen_arr
    with nogil:
        for i in range(r):
            for j in range(k):
                col = indices[i, j]
                if check:
                    if col < 0 or col >= w:
                        bad = 1
                        break
                    if seen[col]:
                        bad = 2
                        break
                    seen[col] = 1
                out[i, col] = values[i, j]
            if bad:
                break
            if check:
                for j in range(k):
                    seen[indices[i, j]] = 0
    if bad == 1:
        raise IndexError(f"scatter index out of range [0, {w})")
    if bad == 2:
        raise IndexError("duplicate scatter index within a row")


def scatter_rows(values, indices, Py_ssize_t width, bint check=True):
    values = np.ascontiguousarray(values)
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    out = np.zeros((values.shape[0], width), dtype=values.dtype)
    if values.size:
        _scatter(values, indices, out, check)
    return out


def _gather(real[:, ::1] m, long long[:, ::1] indices, real[:, ::1] out):
    cdef Py_ssize_t r = indices.shape[0], k = indices.shape[1], i, j
    with nogil:
        for i in range(r):
            for j in range(k):
                out[i, j] = m[i, indices[i, j]]


def gather_rows(m, indices):
    m = np.ascontiguousarray(m)
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    out = np.empty(indices.shape, dtype=m.dtype)
    if out.size:
        _gather(m, indices, out)
    return out
