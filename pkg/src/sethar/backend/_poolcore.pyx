# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for ragged segment pooling.

Batches of variable-cardinality segments are stored as one flat row
matrix plus an offsets vector; these loops are the hot path of both
training and inference and cannot be vectorised across segments with
plain numpy.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def pool_forward(double[:, ::1] emb, cnp.int64_t[::1] offsets):
    """Feature-wise max over each segment's rows.

    emb is (n_rows, z); offsets has length n_segments + 1 and must be
    strictly increasing. Returns (pooled (n_segments, z), argmax
    (n_segments, z)) where argmax holds the smallest row offset within
    the segment that attains the max.
    """
    cdef Py_ssize_t n_seg = offsets.shape[0] - 1
    cdef Py_ssize_t z = emb.shape[1]
    pooled_arr = np.empty((n_seg, z), dtype=np.float64)
    arg_arr = np.empty((n_seg, z), dtype=np.int64)
    cdef double[:, ::1] pooled = pooled_arr
    cdef cnp.int64_t[:, ::1] arg = arg_arr
    cdef Py_ssize_t i, j, r, lo, hi
    cdef double v
    with nogil:
        for i in range(n_seg):
            lo = offsets[i]
            hi = offsets[i + 1]
            for j in range(z):
                pooled[i, j] = emb[lo, j]
                arg[i, j] = 0
            for r in range(lo + 1, hi):
                for j in range(z):
                    v = emb[r, j]
                    if v > pooled[i, j]:
                        pooled[i, j] = v
                        arg[i, j] = r - lo
    return pooled_arr, arg_arr


def pool_backward(double[:, ::1] grad_pooled, cnp.int64_t[:, ::1] argmax,
                  cnp.int64_t[::1] offsets, Py_ssize_t n_rows):
    """Scatter pooled gradients back onto the rows that won the max."""
    cdef Py_ssize_t n_seg = offsets.shape[0] - 1
    cdef Py_ssize_t z = grad_pooled.shape[1]
    out_arr = np.zeros((n_rows, z), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n_seg):
            for j in range(z):
                out[offsets[i] + argmax[i, j], j] += grad_pooled[i, j]
    return out_arr
