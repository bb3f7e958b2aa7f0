# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: log-space message passing, joint-state enumeration for
the factorial filter, and systematic resampling counts.

Contracts match ``_pure.py``; results agree to floating-point reassociation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, INFINITY, M_PI

cnp.import_array()

BACKEND = "native"


cdef inline double _lse_acc(double* buf, Py_ssize_t n) noexcept nogil:
    cdef double m = -INFINITY
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        if buf[i] > m:
            m = buf[i]
    if m == -INFINITY:
        return -INFINITY
    for i in range(n):
        s += exp(buf[i] - m)
    return log(s) + m


def hmm_forward(cnp.ndarray[cnp.float64_t, ndim=1] loginit,
                cnp.ndarray[cnp.float64_t, ndim=2] logtrans,
                cnp.ndarray[cnp.float64_t, ndim=2] loglik):
    cdef Py_ssize_t T = loglik.shape[0]
    cdef Py_ssize_t J = loglik.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] alphal = np.empty((T, J))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf = np.empty(J)
    cdef Py_ssize_t t, i, j
    for j in range(J):
        alphal[0, j] = loginit[j] + loglik[0, j]
    for t in range(1, T):
        for j in range(J):
            for i in range(J):
                buf[i] = alphal[t - 1, i] + logtrans[i, j]
            alphal[t, j] = _lse_acc(&buf[0], J) + loglik[t, j]
    return alphal


def hmm_backward(cnp.ndarray[cnp.float64_t, ndim=2] logtrans,
                 cnp.ndarray[cnp.float64_t, ndim=2] loglik):
    cdef Py_ssize_t T = loglik.shape[0]
    cdef Py_ssize_t J = loglik.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] betal = np.zeros((T, J))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf = np.empty(J)
    cdef Py_ssize_t t, i, j
    for t in range(T - 2, -1, -1):
        for i in range(J):
            for j in range(J):
                buf[j] = logtrans[i, j] + betal[t + 1, j] + loglik[t + 1, j]
            betal[t, i] = _lse_acc(&buf[0], J)
    return betal


def hsmm_backward(cnp.ndarray[cnp.float64_t, ndim=2] logtrans_bar,
                  cnp.ndarray[cnp.float64_t, ndim=2] logdur,
                  cnp.ndarray[cnp.float64_t, ndim=2] logtail,
                  cnp.ndarray[cnp.float64_t, ndim=2] loglik,
                  Py_ssize_t dmax):
    cdef Py_ssize_t T = loglik.shape[0]
    cdef Py_ssize_t J = loglik.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] B = np.zeros((T + 1, J))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Bstar = np.zeros((T, J))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cum = np.zeros((T + 1, J))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf = np.empty(T + 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] jbuf = np.empty(J)
    cdef Py_ssize_t t, i, j, d, span
    for t in range(T):
        for j in range(J):
            cum[t + 1, j] = cum[t, j] + loglik[t, j]
    for t in range(T - 1, -1, -1):
        span = T - t
        if dmax < span:
            span = dmax
        for j in range(J):
            for d in range(1, span + 1):
                buf[d - 1] = B[t + d, j] + logdur[j, d - 1] + cum[t + d, j] - cum[t, j]
            buf[span] = logtail[j, span] + cum[T, j] - cum[t, j]
            Bstar[t, j] = _lse_acc(&buf[0], span + 1)
        for i in range(J):
            for j in range(J):
                jbuf[j] = logtrans_bar[i, j] + Bstar[t, j]
            B[t, i] = _lse_acc(&jbuf[0], J)
    return B, Bstar


def fbpf_accumulate(cnp.ndarray[cnp.float64_t, ndim=3] logtrans_rows,
                    cnp.ndarray[cnp.float64_t, ndim=3] theta_rows,
                    cnp.ndarray[cnp.float64_t, ndim=1] var_chain,
                    cnp.ndarray[cnp.int32_t, ndim=2] joint_idx,
                    double ybar):
    cdef Py_ssize_t N = logtrans_rows.shape[0]
    cdef Py_ssize_t K = logtrans_rows.shape[1]
    cdef Py_ssize_t M = joint_idx.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] logw = np.empty((N, M))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] sumtheta = np.empty((N, M))
    cdef double svar = 0.0
    cdef double lognorm, w, st, diff
    cdef Py_ssize_t n, m, k, j
    for k in range(K):
        svar += var_chain[k]
    lognorm = -0.5 * log(2.0 * M_PI * svar)
    for n in range(N):
        for m in range(M):
            w = 0.0
            st = 0.0
            for k in range(K):
                j = joint_idx[m, k]
                w += logtrans_rows[n, k, j]
                st += theta_rows[n, k, j]
            diff = ybar - st
            sumtheta[n, m] = st
            logw[n, m] = w + lognorm - 0.5 * diff * diff / svar
    return logw, sumtheta


def systematic_counts(cnp.ndarray[cnp.float64_t, ndim=1] weights, double u0):
    cdef Py_ssize_t N = weights.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(N, dtype=np.int64)
    cdef double step = 1.0 / N
    cdef double pos = u0
    cdef double acc = 0.0
    cdef Py_ssize_t i = 0, taken = 0
    while taken < N:
        if i >= N - 1:
            # numeric guard: dump the remainder on the last particle
            counts[N - 1] += N - taken
            break
        acc += weights[i]
        while taken < N and pos < acc:
            counts[i] += 1
            taken += 1
            pos = u0 + taken * step
        i += 1
    return counts
