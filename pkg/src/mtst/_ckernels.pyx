# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Mirrors mtst._pykernels function by function."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def unfold(double[:, ::1] x, Py_ssize_t patch, Py_ssize_t stride, Py_ssize_t n_patches):
    cdef Py_ssize_t b = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t r, j, p, src
    out = np.empty((b, n_patches, patch), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for r in range(b):
            for j in range(n_patches):
                for p in range(patch):
                    src = j * stride + p
                    if src >= d:
                        src = d - 1
                    o[r, j, p] = x[r, src]
    return out


def fold(double[:, :, ::1] grad, Py_ssize_t d, Py_ssize_t stride):
    cdef Py_ssize_t b = grad.shape[0], n_patches = grad.shape[1], patch = grad.shape[2]
    cdef Py_ssize_t r, j, p, dst
    out = np.zeros((b, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for r in range(b):
            for j in range(n_patches):
                for p in range(patch):
                    dst = j * stride + p
                    if dst >= d:
                        dst = d - 1
                    o[r, dst] += grad[r, j, p]
    return out


def softmax_rows(double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double mx, s
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(m):
            mx = x[i, 0]
            for j in range(1, n):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(n):
                o[i, j] = exp(x[i, j] - mx)
                s += o[i, j]
            for j in range(n):
                o[i, j] /= s
    return out


def softmax_rows_backward(double[:, ::1] y, double[:, ::1] grad):
    cdef Py_ssize_t m = y.shape[0], n = y.shape[1]
    cdef Py_ssize_t i, j
    cdef double dot
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(m):
            dot = 0.0
            for j in range(n):
                dot += grad[i, j] * y[i, j]
            for j in range(n):
                o[i, j] = y[i, j] * (grad[i, j] - dot)
    return out


def toeplitz_gather(double[:, ::1] values, Py_ssize_t n):
    cdef Py_ssize_t heads = values.shape[1]
    cdef Py_ssize_t h, i, j
    out = np.empty((heads, n, n), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for h in range(heads):
            for i in range(n):
                for j in range(n):
                    o[h, i, j] = values[i - j + n - 1, h]
    return out


def toeplitz_scatter(double[:, :, ::1] grad):
    cdef Py_ssize_t heads = grad.shape[0], n = grad.shape[1]
    cdef Py_ssize_t h, i, j
    out = np.zeros((2 * n - 1, heads), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for h in range(heads):
            for i in range(n):
                for j in range(n):
                    o[i - j + n - 1, h] += grad[h, i, j]
    return out
