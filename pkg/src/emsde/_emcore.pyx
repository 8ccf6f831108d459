# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: Euler-Maruyama path stepping and the transition-NLL
loss/gradient accumulation. Mirrors emsde.backends.numpy_backend."""

import numpy as np

cimport numpy as cnp
from libc.math cimport isfinite, log

cnp.import_array()

name = "compiled"


def em_paths(const double[:, ::1] a1, const double[:, ::1] a2,
             const double[:, ::1] a3, const double[:, ::1] b,
             const double[::1] bias, const double[:, ::1] x0,
             double tau, const double[:, :, ::1] dbeta):
    """Batch Euler-Maruyama stepping; see numpy_backend.em_paths."""
    cdef Py_ssize_t n = dbeta.shape[0]
    cdef Py_ssize_t steps = dbeta.shape[1]
    cdef Py_ssize_t d = dbeta.shape[2]
    states_arr = np.empty((n, steps + 1, d))
    status_arr = np.full(n, -1, dtype=np.int64)
    cdef double[:, :, ::1] s = states_arr
    cdef cnp.int64_t[::1] status = status_arr
    cdef Py_ssize_t p, t, i, j
    cdef double u1, u2, u3, scale, xj
    cdef bint ok
    for p in range(n):
        for i in range(d):
            s[p, 0, i] = x0[p, i]
        for t in range(steps):
            for i in range(d):
                u1 = 0.0
                u2 = 0.0
                u3 = 0.0
                scale = bias[i]
                for j in range(d):
                    xj = s[p, t, j]
                    u1 += a1[i, j] * xj
                    u2 += a2[i, j] * xj
                    u3 += a3[i, j] * xj
                    scale += b[i, j] * xj
                s[p, t + 1, i] = s[p, t, i] + tau * (u1 + u2 * u3) \
                    + scale * dbeta[p, t, i]
            if status[p] == -1:
                ok = True
                for i in range(d):
                    if not isfinite(s[p, t + 1, i]):
                        ok = False
                        break
                if not ok:
                    status[p] = t + 1
    return states_arr, status_arr


def nll_terms(const double[:, ::1] a1, const double[:, ::1] a2,
              const double[:, ::1] a3, const double[:, ::1] b,
              const double[::1] bias, double eps, double tau,
              const double[:, ::1] x, const double[:, ::1] dx,
              bint identity_cov, bint want_grad):
    """Summed NLL terms and gradients; see numpy_backend.nll_terms."""
    cdef Py_ssize_t n_pairs = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef double mah = 0.0
    cdef double logdet = 0.0
    ga1_arr = np.zeros((d, d))
    ga2_arr = np.zeros((d, d))
    ga3_arr = np.zeros((d, d))
    gb_arr = np.zeros((d, d))
    gbias_arr = np.zeros(d)
    cdef double[:, ::1] ga1 = ga1_arr
    cdef double[:, ::1] ga2 = ga2_arr
    cdef double[:, ::1] ga3 = ga3_arr
    cdef double[:, ::1] gb = gb_arr
    cdef double[::1] gbias = gbias_arr
    cdef Py_ssize_t t, i, j
    cdef double u1, u2, u3, scale, xj, f, r, rr, v, g, h
    for t in range(n_pairs):
        for i in range(d):
            u1 = 0.0
            u2 = 0.0
            u3 = 0.0
            scale = bias[i]
            for j in range(d):
                xj = x[t, j]
                u1 += a1[i, j] * xj
                u2 += a2[i, j] * xj
                u3 += a3[i, j] * xj
                scale += b[i, j] * xj
            f = u1 + u2 * u3
            r = dx[t, i] - tau * f
            if identity_cov:
                mah += r * r
                if want_grad:
                    g = -2.0 * tau * r
                    for j in range(d):
                        xj = x[t, j]
                        ga1[i, j] += g * xj
                        ga2[i, j] += g * u3 * xj
                        ga3[i, j] += g * u2 * xj
            else:
                rr = r * r
                v = tau * (scale * scale + eps)
                mah += rr / v
                logdet += log(v)
                if want_grad:
                    g = -2.0 * tau * r / v
                    h = (1.0 / v - rr / (v * v)) * 2.0 * tau * scale
                    for j in range(d):
                        xj = x[t, j]
                        ga1[i, j] += g * xj
                        ga2[i, j] += g * u3 * xj
                        ga3[i, j] += g * u2 * xj
                        gb[i, j] += h * xj
                    gbias[i] += h
    if not want_grad:
        return mah, logdet, None
    return mah, logdet, (ga1_arr, ga2_arr, ga3_arr, gb_arr, gbias_arr)
