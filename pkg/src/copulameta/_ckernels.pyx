# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled quadrature sums for the mixed-model likelihood."""

from libc.math cimport exp, log, INFINITY

import numpy as np


cdef inline double _term(double count, double logp) nogil:
    # count * log p with 0 * log 0 = 0
    if count == 0.0:
        return 0.0
    return count * logp


def study_loglik_2d(const double[::1] lp1, const double[::1] lq1,
                    const double[:, ::1] lp2, const double[:, ::1] lq2,
                    const double[::1] logw,
                    const double[::1] y1, const double[::1] m1,
                    const double[::1] y2, const double[::1] m2,
                    const double[::1] logc):
    cdef Py_ssize_t n_study = y1.shape[0]
    cdef Py_ssize_t nq = logw.shape[0]
    cdef Py_ssize_t i, a, b
    cdef double inner_max, inner_sum, t, outer_max, outer_sum
    out_arr = np.empty(n_study, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] inner = np.empty(nq, dtype=np.float64)
    cdef double[::1] row = np.empty(nq, dtype=np.float64)
    with nogil:
        for i in range(n_study):
            outer_max = -INFINITY
            for a in range(nq):
                inner_max = -INFINITY
                for b in range(nq):
                    t = logw[b] + _term(y2[i], lp2[a, b]) + _term(m2[i], lq2[a, b])
                    row[b] = t
                    if t > inner_max:
                        inner_max = t
                if inner_max == -INFINITY:
                    inner[a] = -INFINITY
                    continue
                inner_sum = 0.0
                for b in range(nq):
                    inner_sum += exp(row[b] - inner_max)
                t = logw[a] + _term(y1[i], lp1[a]) + _term(m1[i], lq1[a]) + inner_max + log(inner_sum)
                inner[a] = t
                if t > outer_max:
                    outer_max = t
            if outer_max == -INFINITY:
                out[i] = -INFINITY
                continue
            outer_sum = 0.0
            for a in range(nq):
                outer_sum += exp(inner[a] - outer_max)
            out[i] = logc[i] + outer_max + log(outer_sum)
    return out_arr


def study_loglik_1d(const double[::1] lp, const double[::1] lq,
                    const double[::1] logw,
                    const double[::1] y, const double[::1] m,
                    const double[::1] logc):
    cdef Py_ssize_t n_study = y.shape[0]
    cdef Py_ssize_t nq = logw.shape[0]
    cdef Py_ssize_t i, a
    cdef double mx, s, t
    out_arr = np.empty(n_study, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] row = np.empty(nq, dtype=np.float64)
    with nogil:
        for i in range(n_study):
            mx = -INFINITY
            for a in range(nq):
                t = logw[a] + _term(y[i], lp[a]) + _term(m[i], lq[a])
                row[a] = t
                if t > mx:
                    mx = t
            if mx == -INFINITY:
                out[i] = -INFINITY
                continue
            s = 0.0
            for a in range(nq):
                s += exp(row[a] - mx)
            out[i] = logc[i] + mx + log(s)
    return out_arr
