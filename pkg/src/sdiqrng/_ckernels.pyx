# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled interior-point inner kernels (same contract as ``_kernels_py``)."""

import numpy as np


def schur(double complex[:, :, :, ::1] A, double complex[:, :, ::1] X,
          double complex[:, :, ::1] Zinv):
    cdef Py_ssize_t m = A.shape[0], nb = A.shape[1], d = A.shape[2]
    cdef Py_ssize_t e, f, b, i, j, k
    cdef double complex s
    cdef double acc
    G_arr = np.empty((m, d, d), dtype=np.complex128)
    T_arr = np.empty((d, d), dtype=np.complex128)
    cdef double complex[:, :, ::1] G = G_arr
    cdef double complex[:, ::1] T = T_arr
    M_arr = np.zeros((m, m), dtype=np.float64)
    cdef double[:, ::1] M = M_arr
    for b in range(nb):
        for f in range(m):
            # T = X_b A_fb
            for i in range(d):
                for j in range(d):
                    s = 0
                    for k in range(d):
                        s = s + X[b, i, k] * A[f, b, k, j]
                    T[i, j] = s
            # G_f = T Zinv_b
            for i in range(d):
                for j in range(d):
                    s = 0
                    for k in range(d):
                        s = s + T[i, k] * Zinv[b, k, j]
                    G[f, i, j] = s
        for e in range(m):
            for f in range(e, m):
                acc = 0.0
                for i in range(d):
                    for j in range(d):
                        # Re(A_e[i,j] * G_f[j,i])
                        acc += (A[e, b, i, j].real * G[f, j, i].real
                                - A[e, b, i, j].imag * G[f, j, i].imag)
                M[e, f] += acc
    for e in range(m):
        for f in range(e + 1, m):
            M[f, e] = M[e, f]
    return M_arr


def apply_ops(double complex[:, :, :, ::1] A, double complex[:, :, ::1] W):
    cdef Py_ssize_t m = A.shape[0], nb = A.shape[1], d = A.shape[2]
    cdef Py_ssize_t e, b, i, j
    cdef double acc
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    for e in range(m):
        acc = 0.0
        for b in range(nb):
            for i in range(d):
                for j in range(d):
                    acc += (A[e, b, i, j].real * W[b, j, i].real
                            - A[e, b, i, j].imag * W[b, j, i].imag)
        out[e] = acc
    return out_arr


def adjoint(double complex[:, :, :, ::1] A, double[::1] y):
    cdef Py_ssize_t m = A.shape[0], nb = A.shape[1], d = A.shape[2]
    cdef Py_ssize_t e, b, i, j
    out_arr = np.zeros((nb, d, d), dtype=np.complex128)
    cdef double complex[:, :, ::1] out = out_arr
    for e in range(m):
        if y[e] == 0.0:
            continue
        for b in range(nb):
            for i in range(d):
                for j in range(d):
                    out[b, i, j] = out[b, i, j] + y[e] * A[e, b, i, j]
    return out_arr
