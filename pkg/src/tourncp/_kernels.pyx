# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled win-counting kernels; see ``_fallback`` for the reference versions."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, exp, log, M_PI, INFINITY

cnp.import_array()


def count_affine_wins(A, B, C, D, ys, double margin=0.0):
    cdef const double[::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(B, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(C, dtype=np.float64)
    cdef const double[::1] d = np.ascontiguousarray(D, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(ys, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], m = yv.shape[0], i, j
    out = np.empty(m, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    cdef cnp.int64_t w
    cdef double y
    with nogil:
        for j in range(m):
            y = yv[j]
            w = 0
            for i in range(n):
                if fabs(a[i] * y + b[i]) > fabs(c[i] * y + d[i]) + margin:
                    w += 1
            o[j] = w
    return out


cdef inline double _lse_row(const double[:, ::1] lf_mu, const double[:, ::1] ll,
                            Py_ssize_t i, Py_ssize_t K, double y, double c0,
                            double inv, double wy, double wl) noexcept nogil:
    cdef Py_ssize_t k
    cdef double v, mx = -INFINITY, s = 0.0, r
    for k in range(K):
        r = y - lf_mu[i, k]
        v = wy * (c0 - r * r * inv) + wl * ll[i, k]
        if v > mx:
            mx = v
    if mx == -INFINITY:
        return mx
    for k in range(K):
        r = y - lf_mu[i, k]
        v = wy * (c0 - r * r * inv) + wl * ll[i, k]
        s += exp(v - mx)
    return mx + log(s)


def count_lse_wins(mu, loglik, ys, double sigma, double test_y, double test_l,
                   double train_l, double train_y, double margin=0.0):
    cdef const double[:, ::1] mv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef const double[:, ::1] lv = np.ascontiguousarray(loglik, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(ys, dtype=np.float64)
    cdef Py_ssize_t n = mv.shape[0], K = mv.shape[1], m = yv.shape[0], i, j
    cdef double c0 = -0.5 * log(2.0 * M_PI * sigma * sigma)
    cdef double inv = 1.0 / (2.0 * sigma * sigma)
    cdef double lt, ls, y
    out = np.empty(m, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    cdef cnp.int64_t w
    with nogil:
        for j in range(m):
            y = yv[j]
            w = 0
            for i in range(n):
                lt = _lse_row(mv, lv, i, K, y, c0, inv, test_y, test_l)
                ls = _lse_row(mv, lv, i, K, y, c0, inv, train_y, train_l)
                if margin == 0.0:
                    if lt < ls:
                        w += 1
                elif exp(ls) - exp(lt) > margin:
                    w += 1
            o[j] = w
    return out
