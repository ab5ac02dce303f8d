# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled mixture kernels (hot path).

Same contract as forgetlab._kernels_py; see that module for documentation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

cdef double _LOG_2PI = 1.8378770664093453


def component_logpdfs(points, means):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x = np.ascontiguousarray(points, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] m = np.ascontiguousarray(means, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], r = x.shape[1], K = m.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, K), dtype=np.float64)
    cdef Py_ssize_t i, j, k
    cdef double sq, d, c = -0.5 * r * _LOG_2PI
    for i in range(n):
        for k in range(K):
            sq = 0.0
            for j in range(r):
                d = x[i, j] - m[k, j]
                sq += d * d
            out[i, k] = c - 0.5 * sq
    return out


def mixture_logpdf(points, means, log_weights):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x = np.ascontiguousarray(points, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] m = np.ascontiguousarray(means, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lw = np.ascontiguousarray(log_weights, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], r = x.shape[1], K = m.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf = np.empty(K, dtype=np.float64)
    cdef Py_ssize_t i, j, k
    cdef double sq, d, top, acc, c = -0.5 * r * _LOG_2PI
    for i in range(n):
        top = -1e308
        for k in range(K):
            sq = 0.0
            for j in range(r):
                d = x[i, j] - m[k, j]
                sq += d * d
            buf[k] = lw[k] + c - 0.5 * sq
            if buf[k] > top:
                top = buf[k]
        acc = 0.0
        for k in range(K):
            acc += exp(buf[k] - top)
        out[i] = top + log(acc)
    return out


def responsibilities(points, means, log_weights):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x = np.ascontiguousarray(points, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] m = np.ascontiguousarray(means, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lw = np.ascontiguousarray(log_weights, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], r = x.shape[1], K = m.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, K), dtype=np.float64)
    cdef Py_ssize_t i, j, k
    cdef double sq, d, top, acc, c = -0.5 * r * _LOG_2PI
    for i in range(n):
        top = -1e308
        for k in range(K):
            sq = 0.0
            for j in range(r):
                d = x[i, j] - m[k, j]
                sq += d * d
            out[i, k] = lw[k] + c - 0.5 * sq
            if out[i, k] > top:
                top = out[i, k]
        acc = 0.0
        for k in range(K):
            out[i, k] = exp(out[i, k] - top)
            acc += out[i, k]
        for k in range(K):
            out[i, k] /= acc
    return out
