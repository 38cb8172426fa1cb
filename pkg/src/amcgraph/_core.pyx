# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: CSR x dense products and the elementwise
exp/scale passes of the contrastive loss.

Every kernel is deterministic for any thread count: work is split by
row and each row is reduced serially by a single thread.
"""

from cython.parallel import prange
from libc.math cimport exp

import numpy as np

cimport numpy as cnp

cnp.import_array()


def spmm(const long[::1] indptr, const long[::1] indices,
         const double[::1] weights, const double[:, ::1] dense,
         double[:, ::1] out, int threads):
    """out[i,:] = sum_j w[i,j] * dense[j,:] over CSR entries of row i."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = dense.shape[1]
    cdef Py_ssize_t i, p, c
    cdef double w
    if threads > 1:
        for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
            for c in range(d):
                out[i, c] = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                w = weights[p]
                for c in range(d):
                    out[i, c] += w * dense[indices[p], c]
    else:
        with nogil:
            for i in range(n):
                for c in range(d):
                    out[i, c] = 0.0
                for p in range(indptr[i], indptr[i + 1]):
                    w = weights[p]
                    for c in range(d):
                        out[i, c] += w * dense[indices[p], c]
    return None


def exp_out(const double[:, ::1] s, double[:, ::1] out, int threads):
    """out = exp(s)"""
    cdef Py_ssize_t n = s.shape[0], m = s.shape[1]
    cdef Py_ssize_t i, j
    if threads > 1:
        for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
            for j in range(m):
                out[i, j] = exp(s[i, j])
    else:
        with nogil:
            for i in range(n):
                for j in range(m):
                    out[i, j] = exp(s[i, j])
    return None


def exp_rows_shift(const double[:, ::1] s, const double[::1] shift,
                   double[:, ::1] out, int threads):
    """out[i,j] = exp(s[i,j] - shift[i])"""
    cdef Py_ssize_t n = s.shape[0], m = s.shape[1]
    cdef Py_ssize_t i, j
    cdef double h
    if threads > 1:
        for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
            h = shift[i]
            for j in range(m):
                out[i, j] = exp(s[i, j] - h)
    else:
        with nogil:
            for i in range(n):
                h = shift[i]
                for j in range(m):
                    out[i, j] = exp(s[i, j] - h)
    return None


def exp_cols_shift(const double[:, ::1] s, const double[::1] shift,
                   double[:, ::1] out, int threads):
    """out[i,j] = exp(s[i,j] - shift[j])"""
    cdef Py_ssize_t n = s.shape[0], m = s.shape[1]
    cdef Py_ssize_t i, j
    if threads > 1:
        for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
            for j in range(m):
                out[i, j] = exp(s[i, j] - shift[j])
    else:
        with nogil:
            for i in range(n):
                for j in range(m):
                    out[i, j] = exp(s[i, j] - shift[j])
    return None


def mul_rows(const double[:, ::1] e, const double[::1] a, double alpha,
             double[:, ::1] out, int threads):
    """out[i,j] = alpha * e[i,j] * a[i]"""
    cdef Py_ssize_t n = e.shape[0], m = e.shape[1]
    cdef Py_ssize_t i, j
    cdef double f
    if threads > 1:
        for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
            f = alpha * a[i]
            for j in range(m):
                out[i, j] = f * e[i, j]
    else:
        with nogil:
            for i in range(n):
                f = alpha * a[i]
                for j in range(m):
                    out[i, j] = f * e[i, j]
    return None


def mul_cols(const double[:, ::1] e, const double[::1] b, double alpha,
             double[:, ::1] out, int threads):
    """out[i,j] = alpha * e[i,j] * b[j]"""
    cdef Py_ssize_t n = e.shape[0], m = e.shape[1]
    cdef Py_ssize_t i, j
    if threads > 1:
        for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
            for j in range(m):
                out[i, j] = alpha * e[i, j] * b[j]
    else:
        with nogil:
            for i in range(n):
                for j in range(m):
                    out[i, j] = alpha * e[i, j] * b[j]
    return None


def outer_sum_mul(const double[:, ::1] e, const double[::1] a,
                  const double[::1] b, double alpha, double[:, ::1] out,
                  int threads):
    """out[i,j] = alpha * e[i,j] * (a[i] + b[j])"""
    cdef Py_ssize_t n = e.shape[0], m = e.shape[1]
    cdef Py_ssize_t i, j
    cdef double ai
    if threads > 1:
        for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
            ai = a[i]
            for j in range(m):
                out[i, j] = alpha * e[i, j] * (ai + b[j])
    else:
        with nogil:
            for i in range(n):
                ai = a[i]
                for j in range(m):
                    out[i, j] = alpha * e[i, j] * (ai + b[j])
    return None
