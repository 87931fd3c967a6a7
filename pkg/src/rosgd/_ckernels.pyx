# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: per-trial sequential projected SGD and Fisher-Yates."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite

cnp.import_array()

BACKEND = "cython"


def fisher_yates(const double[::1] u):
    cdef Py_ssize_t T = u.shape[0] + 1
    perm_arr = np.arange(T, dtype=np.int64)
    cdef long long[::1] perm = perm_arr
    cdef Py_ssize_t k, i, j
    cdef long long tmp
    for k in range(T - 1):
        i = T - 1 - k
        j = <Py_ssize_t>(u[k] * (i + 1))
        if j > i:
            j = i
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    return perm_arr


cdef int _run(const double[:, ::1] B, double lam, const double[::1] c,
              const double[:, ::1] A, const long long[::1] src,
              const double[::1] eta, double[::1] w, double[::1] g,
              int kind, const double[::1] p0, const double[::1] p1,
              double[:, ::1] path, double[::1] gnorm, bint record) nogil:
    cdef Py_ssize_t s = src.shape[0]
    cdef Py_ssize_t d = w.shape[0]
    cdef Py_ssize_t t, k, j
    cdef long long z
    cdef double acc, gn, cz, e, nrm, diff, scale
    for t in range(s):
        z = src[t]
        cz = c[z]
        gn = 0.0
        for k in range(d):
            acc = 0.0
            for j in range(d):
                acc = acc + B[k, j] * w[j]
            g[k] = lam * w[k] + cz * acc + A[z, k]
            gn = gn + g[k] * g[k]
        gn = sqrt(gn)
        if not isfinite(gn):
            return -1
        e = eta[t]
        for k in range(d):
            w[k] = w[k] - e * g[k]
        if kind == 0:
            nrm = 0.0
            for k in range(d):
                diff = w[k] - p0[k]
                nrm = nrm + diff * diff
            nrm = sqrt(nrm)
            if nrm > p1[0]:
                scale = p1[0] / nrm
                for k in range(d):
                    w[k] = p0[k] + (w[k] - p0[k]) * scale
        else:
            for k in range(d):
                if w[k] < p0[k]:
                    w[k] = p0[k]
                elif w[k] > p1[k]:
                    w[k] = p1[k]
        if record:
            gnorm[t] = gn
            for k in range(d):
                path[t + 1, k] = w[k]
    return 0


def sgd_paths(B, double lam, c, A, src, eta, w1, int kind, p0, p1):
    cdef const double[:, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef const double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const long long[:, ::1] sv = np.ascontiguousarray(src, dtype=np.int64)
    cdef const double[::1] ev = np.ascontiguousarray(eta, dtype=np.float64)
    cdef const double[::1] q0 = np.ascontiguousarray(p0, dtype=np.float64)
    cdef const double[::1] q1 = np.ascontiguousarray(p1, dtype=np.float64)
    w1 = np.ascontiguousarray(w1, dtype=np.float64)
    cdef Py_ssize_t n = sv.shape[0], s = sv.shape[1], d = w1.shape[0]
    Wout = np.empty((n, s + 1, d))
    gout = np.empty((n, s))
    cdef double[:, :, ::1] Wv = Wout
    cdef double[:, ::1] gv = gout
    cdef double[::1] w = np.empty(d)
    cdef double[::1] g = np.empty(d)
    cdef const double[::1] w1v = w1
    cdef Py_ssize_t r, k
    cdef int status
    for r in range(n):
        for k in range(d):
            w[k] = w1v[k]
            Wv[r, 0, k] = w1v[k]
        with nogil:
            status = _run(Bv, lam, cv, Av, sv[r], ev[:s], w, g, kind, q0, q1,
                          Wv[r], gv[r], True)
        if status != 0:
            raise FloatingPointError("non-finite gradient encountered")
    return Wout, gout


def sgd_final(B, double lam, c, A, src, eta, w1, int kind, p0, p1):
    cdef const double[:, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef const double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const long long[:, ::1] sv = np.ascontiguousarray(src, dtype=np.int64)
    cdef const double[::1] ev = np.ascontiguousarray(eta, dtype=np.float64)
    cdef const double[::1] q0 = np.ascontiguousarray(p0, dtype=np.float64)
    cdef const double[::1] q1 = np.ascontiguousarray(p1, dtype=np.float64)
    w1 = np.ascontiguousarray(w1, dtype=np.float64)
    cdef Py_ssize_t n = sv.shape[0], s = sv.shape[1], d = w1.shape[0]
    out = np.empty((n, d))
    cdef double[:, ::1] ov = out
    cdef double[::1] g = np.empty(d)
    cdef double[:, ::1] dummy_path = np.empty((1, 1))
    cdef double[::1] dummy_g = np.empty(1)
    cdef const double[::1] w1v = w1
    cdef Py_ssize_t r, k
    cdef int status
    for r in range(n):
        for k in range(d):
            ov[r, k] = w1v[k]
        with nogil:
            status = _run(Bv, lam, cv, Av, sv[r], ev[:s], ov[r], g, kind, q0, q1,
                          dummy_path, dummy_g, False)
        if status != 0:
            raise FloatingPointError("non-finite gradient encountered")
    return out
