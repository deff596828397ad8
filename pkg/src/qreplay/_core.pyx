# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: BLAS-backed dense layer ops, fused softmax
cross-entropy, and bilinear rotation resampling.

Mirrors qreplay._kernels_np function-for-function. Matrix products go
through dgemm from scipy's exported BLAS; elementwise work is plain C
loops, accumulated in the same order as the NumPy versions so the two
backends agree to rounding.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _gemm_rowmajor(bint ta, bint tb, int m, int n, int k,
                         double alpha, double* a, int lda,
                         double* b, int ldb, double beta,
                         double* c, int ldc) noexcept nogil:
    # Row-major C(m,n) = alpha * op(A) op(B) + beta * C, expressed as the
    # column-major product C^T = op(B)^T op(A)^T that Fortran dgemm computes.
    cdef char fa = b'T' if ta else b'N'
    cdef char fb = b'T' if tb else b'N'
    dgemm(&fb, &fa, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


def linear_forward(double[:, ::1] x, double[:, ::1] w, double[::1] b):
    """z = x @ w.T + b."""
    cdef int n = x.shape[0], din = x.shape[1], dout = w.shape[0]
    z_arr = np.empty((n, dout), dtype=np.float64)
    cdef double[:, ::1] z = z_arr
    cdef int i, j
    with nogil:
        # x (n,din) times w^T (din,dout): op(B)=w with transb
        _gemm_rowmajor(False, True, n, dout, din, 1.0,
                       &x[0, 0], din, &w[0, 0], din, 0.0, &z[0, 0], dout)
        for i in range(n):
            for j in range(dout):
                z[i, j] += b[j]
    return z_arr


def relu_forward(double[:, ::1] z):
    cdef int n = z.shape[0], d = z.shape[1]
    a_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] a = a_arr
    cdef int i, j
    with nogil:
        for i in range(n):
            for j in range(d):
                a[i, j] = z[i, j] if z[i, j] > 0.0 else 0.0
    return a_arr


def relu_backward(double[:, ::1] grad_a, double[:, ::1] z):
    cdef int n = z.shape[0], d = z.shape[1]
    g_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] g = g_arr
    cdef int i, j
    with nogil:
        for i in range(n):
            for j in range(d):
                g[i, j] = grad_a[i, j] if z[i, j] > 0.0 else 0.0
    return g_arr


def linear_backward(double[:, ::1] delta, double[:, ::1] x,
                    double[:, ::1] w, bint want_dx=True):
    cdef int n = delta.shape[0], dout = delta.shape[1], din = x.shape[1]
    dw_arr = np.empty((dout, din), dtype=np.float64)
    db_arr = np.zeros(dout, dtype=np.float64)
    cdef double[:, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] dx
    cdef int i, j
    dx_arr = None
    with nogil:
        # dw (dout,din) = delta^T (dout,n) @ x (n,din)
        _gemm_rowmajor(True, False, dout, din, n, 1.0,
                       &delta[0, 0], dout, &x[0, 0], din, 0.0, &dw[0, 0], din)
        for i in range(n):
            for j in range(dout):
                db[j] += delta[i, j]
    if want_dx:
        dx_arr = np.empty((n, din), dtype=np.float64)
        dx = dx_arr
        with nogil:
            # dx (n,din) = delta (n,dout) @ w (dout,din)
            _gemm_rowmajor(False, False, n, din, dout, 1.0,
                           &delta[0, 0], dout, &w[0, 0], din, 0.0,
                           &dx[0, 0], din)
    return dw_arr, db_arr, dx_arr


def softmax_xent(double[:, ::1] logits, long[::1] labels):
    cdef int n = logits.shape[0], c = logits.shape[1]
    d_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] d = d_arr
    cdef double loss = 0.0, m, s, shifted
    cdef double inv_n = 1.0 / n
    cdef int i, j
    cdef long y
    with nogil:
        for i in range(n):
            m = logits[i, 0]
            for j in range(1, c):
                if logits[i, j] > m:
                    m = logits[i, j]
            s = 0.0
            for j in range(c):
                d[i, j] = exp(logits[i, j] - m)
                s += d[i, j]
            y = labels[i]
            loss += log(s) - (logits[i, y] - m)
            for j in range(c):
                d[i, j] /= s
            d[i, y] -= 1.0
            for j in range(c):
                d[i, j] *= inv_n
    return loss * inv_n, d_arr


def apply_rotation_plan(double[:, ::1] images, long[:, ::1] indices,
                        double[:, ::1] weights):
    cdef int n = images.shape[0], p = images.shape[1]
    out_arr = np.empty((n, p), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double acc
    cdef int i, o
    with nogil:
        for i in range(n):
            for o in range(p):
                acc = weights[o, 0] * images[i, indices[o, 0]]
                acc += weights[o, 1] * images[i, indices[o, 1]]
                acc += weights[o, 2] * images[i, indices[o, 2]]
                acc += weights[o, 3] * images[i, indices[o, 3]]
                if acc < 0.0:
                    acc = 0.0
                elif acc > 1.0:
                    acc = 1.0
                out[i, o] = acc
    return out_arr
