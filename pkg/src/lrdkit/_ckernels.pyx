# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: one-sided Jacobi rotations, im2col and col2im."""

from libc.math cimport sqrt, fabs

import numpy as np
cimport numpy as cnp

cnp.import_array()


def jacobi_orthogonalize(double[:, ::1] G, double[:, ::1] W, double tol,
                         int max_sweeps):
    """Cyclic one-sided Jacobi on the rows of ``G`` (rotations mirrored in ``W``).

    Rows of ``G`` are the columns of the matrix being orthogonalized. Works
    in place and returns the number of sweeps performed.
    """
    cdef Py_ssize_t n = G.shape[0]
    cdef Py_ssize_t m = G.shape[1]
    cdef Py_ssize_t nw = W.shape[1]
    cdef Py_ssize_t i, j, l
    cdef double alpha, beta, gamma, zeta, t, c, s, gi, gj
    cdef int sweep, rotated
    for sweep in range(max_sweeps):
        rotated = 0
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for l in range(m):
                    gi = G[i, l]
                    gj = G[j, l]
                    alpha += gi * gi
                    beta += gj * gj
                    gamma += gi * gj
                if gamma == 0.0 or fabs(gamma) <= tol * sqrt(alpha * beta):
                    continue
                rotated = 1
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for l in range(m):
                    gi = G[i, l]
                    gj = G[j, l]
                    G[i, l] = c * gi - s * gj
                    G[j, l] = s * gi + c * gj
                for l in range(nw):
                    gi = W[i, l]
                    gj = W[j, l]
                    W[i, l] = c * gi - s * gj
                    W[j, l] = s * gi + c * gj
        if not rotated:
            return sweep + 1
    return max_sweeps


def im2col(double[:, :, :, ::1] x, int kh, int kw, int padding):
    cdef Py_ssize_t N = x.shape[0]
    cdef Py_ssize_t C = x.shape[1]
    cdef Py_ssize_t H = x.shape[2]
    cdef Py_ssize_t Wd = x.shape[3]
    cdef Py_ssize_t Ho = H + 2 * padding - kh + 1
    cdef Py_ssize_t Wo = Wd + 2 * padding - kw + 1
    cdef Py_ssize_t n, c, i, j, oh, ow, ih, iw, row, col
    out_arr = np.zeros((N * Ho * Wo, C * kh * kw), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for n in range(N):
        for oh in range(Ho):
            for ow in range(Wo):
                row = (n * Ho + oh) * Wo + ow
                col = 0
                for c in range(C):
                    for i in range(kh):
                        ih = oh + i - padding
                        for j in range(kw):
                            iw = ow + j - padding
                            if 0 <= ih < H and 0 <= iw < Wd:
                                out[row, col] = x[n, c, ih, iw]
                            col += 1
    return out_arr


def col2im(double[:, ::1] cols, Py_ssize_t N, Py_ssize_t C, Py_ssize_t H,
           Py_ssize_t Wd, int kh, int kw, int padding):
    cdef Py_ssize_t Ho = H + 2 * padding - kh + 1
    cdef Py_ssize_t Wo = Wd + 2 * padding - kw + 1
    cdef Py_ssize_t n, c, i, j, oh, ow, ih, iw, row, col
    dx_arr = np.zeros((N, C, H, Wd), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    for n in range(N):
        for oh in range(Ho):
            for ow in range(Wo):
                row = (n * Ho + oh) * Wo + ow
                col = 0
                for c in range(C):
                    for i in range(kh):
                        ih = oh + i - padding
                        for j in range(kw):
                            iw = ow + j - padding
                            if 0 <= ih < H and 0 <= iw < Wd:
                                dx[n, c, ih, iw] += cols[row, col]
                            col += 1
    return dx_arr
