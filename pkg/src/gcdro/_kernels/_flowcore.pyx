# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled flow edge kernels; see _flowcore_py.py for the reference semantics."""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, log

cnp.import_array()

BACKEND = "cython"

cdef double LOG_FLOOR = 1e-300


def neighbor_quad_sums(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] col,
                       const cnp.int64_t[::1] row, const cnp.float64_t[::1] w,
                       const cnp.float64_t[::1] ell, const cnp.float64_t[::1] q):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t e = col.shape[0]
    out = np.zeros(n, dtype=np.float64)
    cdef cnp.float64_t[::1] s = out
    cdef Py_ssize_t k
    cdef double d
    for k in range(e):
        d = ell[col[k]] - ell[row[k]]
        s[row[k]] += w[k] * q[col[k]] * d * d
    return out


def edge_velocities(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] col,
                    const cnp.int64_t[::1] row, const cnp.float64_t[::1] w,
                    const cnp.float64_t[::1] ell, const cnp.float64_t[::1] q,
                    double alpha, double beta):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t e = col.shape[0]
    cdef Py_ssize_t k, i, j
    logq_arr = np.empty(n, dtype=np.float64)
    cdef cnp.float64_t[::1] logq = logq_arr
    for k in range(n):
        logq[k] = log(q[k] if q[k] > LOG_FLOOR else LOG_FLOOR)

    out = np.empty(e, dtype=np.float64)
    cdef cnp.float64_t[::1] v = out
    cdef cnp.float64_t[::1] s
    if alpha != 0.0:
        s = neighbor_quad_sums(indptr, col, row, w, ell, q)
        for k in range(e):
            i = row[k]
            j = col[k]
            v[k] = (ell[i] - ell[j]) + beta * (logq[j] - logq[i]) + alpha * (s[j] - s[i])
    else:
        for k in range(e):
            i = row[k]
            j = col[k]
            v[k] = (ell[i] - ell[j]) + beta * (logq[j] - logq[i])
    return out


def step_quantities(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] col,
                    const cnp.int64_t[::1] row, const cnp.float64_t[::1] w,
                    const cnp.float64_t[::1] q, const cnp.float64_t[::1] v):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t e = col.shape[0]
    dq_arr = np.zeros(n, dtype=np.float64)
    out_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.float64_t[::1] dq = dq_arr
    cdef cnp.float64_t[::1] out = out_arr
    cdef double action_rate = 0.0
    cdef double ascent_rate = 0.0
    cdef double v_max = 0.0
    cdef double flux, vk, fv
    cdef Py_ssize_t k
    for k in range(e):
        vk = v[k]
        flux = vk * (q[col[k]] if vk > 0.0 else q[row[k]])
        dq[row[k]] += w[k] * flux
        fv = flux * vk
        action_rate += fv
        ascent_rate += w[k] * fv
        if vk < 0.0:
            out[row[k]] += w[k] * (-vk)
        if fabs(vk) > v_max:
            v_max = fabs(vk)
    cdef double out_max = 0.0
    for k in range(n):
        if out[k] > out_max:
            out_max = out[k]
    return dq_arr, 0.5 * action_rate, 0.5 * ascent_rate, out_max, v_max


def tv_sum(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] col,
           const cnp.int64_t[::1] row, const cnp.float64_t[::1] w,
           const cnp.float64_t[::1] ell, const cnp.float64_t[::1] q):
    cdef Py_ssize_t e = col.shape[0]
    cdef double acc = 0.0
    cdef double d
    cdef Py_ssize_t k
    for k in range(e):
        d = ell[row[k]] - ell[col[k]]
        acc += w[k] * q[row[k]] * q[col[k]] * d * d
    return acc
