# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled HMM recursions; drop-in replacement for ``_kernels_py``."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, log

cnp.import_array()


cdef inline double _logsumexp_row(const double* x, Py_ssize_t n) noexcept nogil:
    cdef double m = -INFINITY
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        if x[i] > m:
            m = x[i]
    if m == -INFINITY:
        return -INFINITY
    for i in range(n):
        s += exp(x[i] - m)
    return m + log(s)


def forward(const double[::1] log_pi, const double[:, ::1] log_A, const double[:, ::1] log_B):
    cdef Py_ssize_t T = log_B.shape[0]
    cdef Py_ssize_t K = log_B.shape[1]
    alpha_arr = np.empty((T, K), dtype=np.float64)
    work_arr = np.empty(K, dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[::1] work = work_arr
    cdef Py_ssize_t t, i, j
    cdef double ll
    with nogil:
        for j in range(K):
            alpha[0, j] = log_pi[j] + log_B[0, j]
        for t in range(1, T):
            for j in range(K):
                for i in range(K):
                    work[i] = alpha[t - 1, i] + log_A[i, j]
                alpha[t, j] = _logsumexp_row(&work[0], K) + log_B[t, j]
        ll = _logsumexp_row(&alpha[T - 1, 0], K)
    return float(ll), alpha_arr


def backward(const double[:, ::1] log_A, const double[:, ::1] log_B):
    cdef Py_ssize_t T = log_B.shape[0]
    cdef Py_ssize_t K = log_B.shape[1]
    beta_arr = np.empty((T, K), dtype=np.float64)
    work_arr = np.empty(K, dtype=np.float64)
    cdef double[:, ::1] beta = beta_arr
    cdef double[::1] work = work_arr
    cdef Py_ssize_t t, i, j
    with nogil:
        for i in range(K):
            beta[T - 1, i] = 0.0
        for t in range(T - 2, -1, -1):
            for i in range(K):
                for j in range(K):
                    work[j] = log_A[i, j] + log_B[t + 1, j] + beta[t + 1, j]
                beta[t, i] = _logsumexp_row(&work[0], K)
    return beta_arr


def viterbi_path(const double[::1] log_pi, const double[:, ::1] log_A, const double[:, ::1] log_B):
    cdef Py_ssize_t T = log_B.shape[0]
    cdef Py_ssize_t K = log_B.shape[1]
    delta_arr = np.empty((T, K), dtype=np.float64)
    psi_arr = np.empty((T, K), dtype=np.int64)
    states_arr = np.empty(T, dtype=np.int64)
    cdef double[:, ::1] delta = delta_arr
    cdef long long[:, ::1] psi = psi_arr
    cdef long long[::1] states = states_arr
    cdef Py_ssize_t t, i, j
    cdef double best, cand
    cdef Py_ssize_t arg
    with nogil:
        for j in range(K):
            delta[0, j] = log_pi[j] + log_B[0, j]
        for t in range(1, T):
            for j in range(K):
                best = -INFINITY
                arg = 0
                for i in range(K):
                    cand = delta[t - 1, i] + log_A[i, j]
                    if cand > best:  # strict: ties keep the lower index
                        best = cand
                        arg = i
                delta[t, j] = best + log_B[t, j]
                psi[t, j] = arg
        best = -INFINITY
        arg = 0
        for j in range(K):
            if delta[T - 1, j] > best:
                best = delta[T - 1, j]
                arg = j
        states[T - 1] = arg
        for t in range(T - 2, -1, -1):
            states[t] = psi[t + 1, states[t + 1]]
    return states_arr


def transition_weights(
    const double[:, ::1] log_alpha,
    const double[:, ::1] log_beta,
    const double[:, ::1] log_A,
    const double[:, ::1] log_B,
    double loglik,
):
    cdef Py_ssize_t T = log_B.shape[0]
    cdef Py_ssize_t K = log_B.shape[1]
    out_arr = np.zeros((K, K), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, i, j
    cdef double a
    with nogil:
        for t in range(T - 1):
            for i in range(K):
                a = log_alpha[t, i] - loglik
                for j in range(K):
                    out[i, j] += exp(a + log_A[i, j] + log_B[t + 1, j] + log_beta[t + 1, j])
    return out_arr
