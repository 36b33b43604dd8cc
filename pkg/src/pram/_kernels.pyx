# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled accumulation of weighted GLM-form estimating equations.

Same contract as ``_kernels_py``; see that module for the array layout.
"""

import numpy as np

from libc.math cimport exp


cdef inline double _expit(double v) noexcept nogil:
    cdef double e
    if v >= 0.0:
        e = exp(-v)
        return 1.0 / (1.0 + e)
    e = exp(v)
    return e / (1.0 + e)


cdef enum:
    MAXD = 32


def glm_score_jac(const double[:, :, ::1] X, const double[:, ::1] r,
                  const double[:, ::1] W, const double[::1] beta,
                  int link, bint want_jac=True):
    cdef Py_ssize_t K = X.shape[0], n = X.shape[1], d = X.shape[2]
    cdef Py_ssize_t i, k, a, b
    cdef double w, eta, mu, dmu, res, c, xa
    cdef double gl[MAXD]
    cdef double Jl[MAXD * MAXD]
    cdef double bl[MAXD]
    cdef const double* x
    if d > MAXD:
        raise ValueError(f"compiled kernel supports d <= {MAXD}")
    g = np.zeros(d)
    J = np.zeros((d, d))
    cdef double[::1] gv = g
    cdef double[:, ::1] Jv = J
    with nogil:
        for a in range(d):
            gl[a] = 0.0
            bl[a] = beta[a]
            for b in range(d):
                Jl[a * d + b] = 0.0
        for i in range(n):
            for k in range(K):
                w = W[i, k]
                if w == 0.0:
                    continue
                x = &X[k, i, 0]
                eta = 0.0
                for a in range(d):
                    eta = eta + x[a] * bl[a]
                if link == 1:
                    mu = _expit(eta)
                    dmu = mu * (1.0 - mu)
                else:
                    mu = eta
                    dmu = 1.0
                res = w * (r[k, i] - mu)
                for a in range(d):
                    gl[a] += res * x[a]
                if want_jac:
                    c = w * dmu
                    for a in range(d):
                        xa = c * x[a]
                        for b in range(a + 1):
                            Jl[a * d + b] -= xa * x[b]
        for a in range(d):
            gv[a] = gl[a] / n
            for b in range(a + 1):
                Jv[a, b] = Jl[a * d + b] / n
                Jv[b, a] = Jv[a, b]
    return g, J


def glm_terms(const double[:, :, ::1] X, const double[:, ::1] r,
              const double[:, ::1] W, const double[::1] beta, int link):
    cdef Py_ssize_t K = X.shape[0], n = X.shape[1], d = X.shape[2]
    cdef Py_ssize_t i, k, a
    cdef double w, eta, mu, res
    out = np.zeros((n, d))
    cdef double[:, ::1] ov = out
    with nogil:
        for i in range(n):
            for k in range(K):
                w = W[i, k]
                if w == 0.0:
                    continue
                eta = 0.0
                for a in range(d):
                    eta = eta + X[k, i, a] * beta[a]
                mu = _expit(eta) if link == 1 else eta
                res = w * (r[k, i] - mu)
                for a in range(d):
                    ov[i, a] += res * X[k, i, a]
    return out
