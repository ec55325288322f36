# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the per-query ranking kernels.

Mirrors ``rankbound.kernels.reference`` with O(N) memory per query (the
NumPy fallback materializes positives-by-instances matrices).  Summation
runs over instances in index order, matching the fallback closely enough
for 1e-12-level parity.
"""

from libc.math cimport exp, fmin

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double c_sigmoid(double x) nogil:
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    cdef double e = exp(x)
    return e / (1.0 + e)


cdef inline double c_step_bound(double t, double tau, double delta,
                                double rho) nogil:
    cdef double s
    if t > delta:
        return rho * (t - delta) + c_sigmoid(delta / tau) + 0.5
    s = c_sigmoid(t / tau)
    if t < 0.0:
        return s
    return s + 0.5


cdef inline double c_step_bound_grad(double t, double tau, double delta,
                                     double rho) nogil:
    cdef double s
    if t > delta:
        return rho
    s = c_sigmoid(t / tau)
    return s * (1.0 - s) / tau


def step_bound(t, double tau, double delta, double rho):
    arr = np.ascontiguousarray(t, dtype=np.float64)
    out = np.empty_like(arr)
    cdef const double[::1] src = arr.ravel()
    cdef double[::1] dst = out.ravel()
    cdef Py_ssize_t i, n = src.shape[0]
    for i in range(n):
        dst[i] = c_step_bound(src[i], tau, delta, rho)
    return out


def step_bound_grad(t, double tau, double delta, double rho):
    arr = np.ascontiguousarray(t, dtype=np.float64)
    out = np.empty_like(arr)
    cdef const double[::1] src = arr.ravel()
    cdef double[::1] dst = out.ravel()
    cdef Py_ssize_t i, n = src.shape[0]
    for i in range(n):
        dst[i] = c_step_bound_grad(src[i], tau, delta, rho)
    return out


def exact_rank_stats(scores, rel):
    cdef const double[::1] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef const double[::1] r = np.ascontiguousarray(rel, dtype=np.float64)
    cdef Py_ssize_t n = s.shape[0], i, j, p = 0
    cdef Py_ssize_t[::1] pos = np.flatnonzero(np.asarray(rel) > 0.0)
    cdef Py_ssize_t npos = pos.shape[0]
    rank_plus = np.zeros(npos)
    rank_minus = np.zeros(npos)
    graded = np.zeros(npos)
    cdef double[::1] rp = rank_plus
    cdef double[::1] rm = rank_minus
    cdef double[::1] hp = graded
    cdef double sk, rk, a, b, c
    cdef Py_ssize_t k
    with nogil:
        for p in range(npos):
            k = pos[p]
            sk = s[k]
            rk = r[k]
            a = 0.0
            b = 0.0
            c = 0.0
            for j in range(n):
                if s[j] >= sk:
                    if r[j] >= rk:
                        a += 1.0
                    else:
                        b += 1.0
                    if r[j] > 0.0:
                        c += fmin(r[j], rk)
            rp[p] = a
            rm[p] = b
            hp[p] = c
    return rank_plus, rank_minus, graded


def smooth_rank_minus(scores, rel, double tau, double delta, double rho):
    cdef const double[::1] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef const double[::1] r = np.ascontiguousarray(rel, dtype=np.float64)
    cdef Py_ssize_t n = s.shape[0], j, p
    cdef Py_ssize_t[::1] pos = np.flatnonzero(np.asarray(rel) > 0.0)
    cdef Py_ssize_t npos = pos.shape[0]
    out = np.zeros(npos)
    cdef double[::1] o = out
    cdef double sk, rk, acc
    cdef Py_ssize_t k
    with nogil:
        for p in range(npos):
            k = pos[p]
            sk = s[k]
            rk = r[k]
            acc = 0.0
            for j in range(n):
                if r[j] < rk:
                    acc += c_step_bound(s[j] - sk, tau, delta, rho)
            o[p] = acc
    return out


def smooth_rank_minus_backward(scores, rel, weights,
                               double tau, double delta, double rho):
    cdef const double[::1] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef const double[::1] r = np.ascontiguousarray(rel, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = s.shape[0], j, p
    cdef Py_ssize_t[::1] pos = np.flatnonzero(np.asarray(rel) > 0.0)
    cdef Py_ssize_t npos = pos.shape[0]
    grad = np.zeros(n)
    cdef double[::1] g = grad
    cdef double sk, rk, wk, gk, gj
    cdef Py_ssize_t k
    with nogil:
        for p in range(npos):
            k = pos[p]
            sk = s[k]
            rk = r[k]
            wk = w[p]
            gk = 0.0
            for j in range(n):
                if r[j] < rk:
                    gj = wk * c_step_bound_grad(s[j] - sk, tau, delta, rho)
                    g[j] += gj
                    gk += gj
            g[k] -= gk
    return grad


def smooth_ap_sigmoid(scores, rel, double tau):
    cdef const double[::1] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef const double[::1] r = np.ascontiguousarray(rel, dtype=np.float64)
    cdef Py_ssize_t n = s.shape[0], j, p
    cdef Py_ssize_t[::1] pos = np.flatnonzero(np.asarray(rel) > 0.0)
    cdef Py_ssize_t npos = pos.shape[0]
    num = np.zeros(npos)
    ng = np.zeros(npos)
    cdef double[::1] numv = num
    cdef double[::1] ngv = ng
    grad = np.zeros(n)
    cdef double[::1] g = grad
    cdef double sk, a, b, sig, den, cpos, cneg, gk, gj, ap = 0.0
    cdef Py_ssize_t k
    with nogil:
        for p in range(npos):
            k = pos[p]
            sk = s[k]
            a = 0.0
            b = 0.0
            for j in range(n):
                sig = c_sigmoid((s[j] - sk) / tau)
                if r[j] > 0.0:
                    a += sig
                else:
                    b += sig
            # the self term contributes sigma(0) = 0.5; fold it into the
            # leading 1 of the positive rank: 1 + (a - 0.5) = a + 0.5
            numv[p] = a + 0.5
            ngv[p] = b
        for p in range(npos):
            k = pos[p]
            sk = s[k]
            den = numv[p] + ngv[p]
            ap += numv[p] / den
            cpos = ngv[p] / (den * den) / npos
            cneg = -numv[p] / (den * den) / npos
            gk = 0.0
            for j in range(n):
                if j == k:
                    continue
                sig = c_sigmoid((s[j] - sk) / tau)
                gj = (cpos if r[j] > 0.0 else cneg) * sig * (1.0 - sig) / tau
                g[j] += gj
                gk += gj
            g[k] -= gk
        ap /= npos
    return ap, grad
