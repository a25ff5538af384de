# cython: language_level=3
"""Compiled convolution and pooling kernels (float64, single thread).

Signatures and tie-breaking match ``_kernels_py`` exactly.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef _im2col(const double[:, :, :, ::1] x, Py_ssize_t k):
    """(N, C, H, W) -> (N*Ho*Wo, C*k*k) patch matrix, row-major over (n, i, j)."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t ho = h - k + 1, wo = wd - k + 1, ckk = c * k * k
    cols_arr = np.empty((n * ho * wo, ckk), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    cdef Py_ssize_t ni, ci, i, j, di, dj, row, col
    for ni in range(n):
        for i in range(ho):
            for j in range(wo):
                row = (ni * ho + i) * wo + j
                col = 0
                for ci in range(c):
                    for di in range(k):
                        for dj in range(k):
                            cols[row, col] = x[ni, ci, i + di, j + dj]
                            col = col + 1
    return cols_arr


cdef _col2im(const double[:, ::1] dcols, Py_ssize_t n, Py_ssize_t c, Py_ssize_t h,
             Py_ssize_t wd, Py_ssize_t k):
    cdef Py_ssize_t ho = h - k + 1, wo = wd - k + 1
    dx_arr = np.zeros((n, c, h, wd), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t ni, ci, i, j, di, dj, row, col
    for ni in range(n):
        for i in range(ho):
            for j in range(wo):
                row = (ni * ho + i) * wo + j
                col = 0
                for ci in range(c):
                    for di in range(k):
                        for dj in range(k):
                            dx[ni, ci, i + di, j + dj] += dcols[row, col]
                            col = col + 1
    return dx_arr


def conv2d_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w,
                   const double[::1] b):
    """Valid cross-correlation: compiled patch gather, BLAS product."""
    cdef Py_ssize_t n = x.shape[0], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t ho = h - k + 1, wo = wd - k + 1
    cols = _im2col(x, k)
    wmat = np.asarray(w).reshape(o, -1)
    y = cols @ wmat.T
    y += np.asarray(b)
    return np.ascontiguousarray(y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))


def conv2d_backward(const double[:, :, :, ::1] dy, const double[:, :, :, ::1] x,
                    const double[:, :, :, ::1] w):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], k = w.shape[2]
    cols = _im2col(x, k)
    dym = np.ascontiguousarray(np.asarray(dy).transpose(0, 2, 3, 1)).reshape(-1, o)
    wmat = np.asarray(w).reshape(o, -1)
    dw = (dym.T @ cols).reshape(o, c, k, k)
    db = dym.sum(axis=0)
    dcols = np.ascontiguousarray(dym @ wmat)
    dx = _col2im(dcols, n, c, h, wd, k)
    return dx, dw, db


def maxpool2_forward(const double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    y_arr = np.empty((n, c, ho, wo), dtype=np.float64)
    arg_arr = np.empty((n, c, ho, wo), dtype=np.int8)
    cdef double[:, :, :, ::1] y = y_arr
    cdef signed char[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t ni, ci, i, j, q
    cdef double best, v
    cdef signed char besti
    for ni in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    best = x[ni, ci, 2 * i, 2 * j]
                    besti = 0
                    for q in range(1, 4):
                        v = x[ni, ci, 2 * i + q // 2, 2 * j + q % 2]
                        if v > best:
                            best = v
                            besti = <signed char>q
                    y[ni, ci, i, j] = best
                    arg[ni, ci, i, j] = besti
    return y_arr, arg_arr


def maxpool2_backward(const double[:, :, :, ::1] dy, const signed char[:, :, :, ::1] arg,
                      tuple in_shape):
    cdef Py_ssize_t n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    dx_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t ni, ci, i, j, q
    for ni in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    q = arg[ni, ci, i, j]
                    dx[ni, ci, 2 * i + q // 2, 2 * j + q % 2] = dy[ni, ci, i, j]
    return dx_arr
