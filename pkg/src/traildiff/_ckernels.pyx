# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled kernels: conv1d and group_norm (forward and backward).

BLAS does the convolution GEMM on a packed im2col buffer; normalization
is a fused single-pass loop with double accumulators. kernels.py
validates arguments and owns the public contracts; this module assumes
clean, C-contiguous inputs of float32 or float64.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()

ctypedef fused real:
    float
    double


cdef void _gemm(char ta, char tb, int m, int n, int k,
                real alpha, real* A, int lda, real* B, int ldb,
                real beta, real* C, int ldc) noexcept nogil:
    if real is float:
        sgemm(&ta, &tb, &m, &n, &k, &alpha, A, &lda, B, &ldb, &beta, C, &ldc)
    else:
        dgemm(&ta, &tb, &m, &n, &k, &alpha, A, &lda, B, &ldb, &beta, C, &ldc)


cdef void _pack(real[:, :, ::1] x, real[:, ::1] col, int b, int K) noexcept nogil:
    # col[c*K+k, m] = x[b, c, m+k-K//2], zero outside the signal
    cdef int C = x.shape[1], M = x.shape[2], P = K // 2
    cdef int c, k, m, src
    for c in range(C):
        for k in range(K):
            for m in range(M):
                src = m + k - P
                if 0 <= src < M:
                    col[c * K + k, m] = x[b, c, src]
                else:
                    col[c * K + k, m] = 0


def conv1d_forward(real[:, :, ::1] x, real[:, :, ::1] w):
    cdef int B = x.shape[0], C = x.shape[1], M = x.shape[2]
    cdef int Cout = w.shape[0], K = w.shape[2], CK = C * K
    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty((B, Cout, M), dtype=dtype)
    col_arr = np.empty((CK, M), dtype=dtype)
    cdef real[:, :, ::1] y = y_arr
    cdef real[:, ::1] col = col_arr
    cdef int b
    with nogil:
        for b in range(B):
            _pack(x, col, b, K)
            # row-major Y_b = W @ col via the column-major swap trick
            _gemm(c'N', c'N', M, Cout, CK, <real>1.0, &col[0, 0], M,
                  &w[0, 0, 0], CK, <real>0.0, &y[b, 0, 0], M)
    return y_arr


def conv1d_backward_w(real[:, :, ::1] x, real[:, :, ::1] gy, int K):
    cdef int B = x.shape[0], C = x.shape[1], M = x.shape[2]
    cdef int Cout = gy.shape[1], CK = C * K
    dtype = np.float32 if real is float else np.float64
    dw_arr = np.zeros((Cout, C, K), dtype=dtype)
    col_arr = np.empty((CK, M), dtype=dtype)
    cdef real[:, :, ::1] dw = dw_arr
    cdef real[:, ::1] col = col_arr
    cdef int b
    with nogil:
        for b in range(B):
            _pack(x, col, b, K)
            # row-major dW += gy_b @ col^T, accumulated over the batch
            _gemm(c'T', c'N', CK, Cout, M, <real>1.0, &col[0, 0], M,
                  &gy[b, 0, 0], M, <real>1.0, &dw[0, 0, 0], CK)
    return dw_arr


def group_norm_forward(real[:, :, ::1] x, int groups, double eps):
    cdef int B = x.shape[0], C = x.shape[1], M = x.shape[2]
    cdef int Cg = C // groups, n = Cg * M
    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty((B, C, M), dtype=dtype)
    rstd_arr = np.empty((B, groups), dtype=dtype)
    cdef real[:, :, ::1] y = y_arr
    cdef real[:, ::1] rstd = rstd_arr
    cdef real* xb
    cdef real* yb
    cdef int b, g, i
    cdef double s, mean, d, r
    with nogil:
        for b in range(B):
            for g in range(groups):
                xb = &x[b, g * Cg, 0]
                yb = &y[b, g * Cg, 0]
                s = 0.0
                for i in range(n):
                    s += xb[i]
                mean = s / n
                s = 0.0
                for i in range(n):
                    d = xb[i] - mean
                    s += d * d
                r = 1.0 / sqrt(s / n + eps)
                for i in range(n):
                    yb[i] = <real>((xb[i] - mean) * r)
                rstd[b, g] = <real>r
    return y_arr, rstd_arr


def group_norm_backward(real[:, :, ::1] gy, real[:, :, ::1] y, real[:, ::1] rstd, int groups):
    cdef int B = gy.shape[0], C = gy.shape[1], M = gy.shape[2]
    cdef int Cg = C // groups, n = Cg * M
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.empty((B, C, M), dtype=dtype)
    cdef real[:, :, ::1] dx = dx_arr
    cdef real* gb
    cdef real* yb
    cdef real* db
    cdef int b, g, i
    cdef double s1, s2, m1, m2, r
    with nogil:
        for b in range(B):
            for g in range(groups):
                gb = &gy[b, g * Cg, 0]
                yb = &y[b, g * Cg, 0]
                db = &dx[b, g * Cg, 0]
                s1 = 0.0
                s2 = 0.0
                for i in range(n):
                    s1 += gb[i]
                    s2 += gb[i] * yb[i]
                m1 = s1 / n
                m2 = s2 / n
                r = rstd[b, g]
                for i in range(n):
                    db[i] = <real>((gb[i] - m1 - yb[i] * m2) * r)
    return dx_arr

