# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled CRF kernels; same contracts as ``_crf_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


def forward(double[:, ::1] E, double[:, ::1] T):
    cdef Py_ssize_t L = E.shape[0], K = E.shape[1]
    cdef Py_ssize_t start = K, stop = K + 1
    cdef Py_ssize_t t, i, j
    cdef double m, s, v
    alpha_arr = np.empty((L, K), dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_arr
    for j in range(K):
        alpha[0, j] = T[start, j] + E[0, j]
    for t in range(1, L):
        for j in range(K):
            m = -INFINITY
            for i in range(K):
                v = alpha[t - 1, i] + T[i, j]
                if v > m:
                    m = v
            s = 0.0
            for i in range(K):
                s += exp(alpha[t - 1, i] + T[i, j] - m)
            alpha[t, j] = E[t, j] + m + log(s)
    m = -INFINITY
    for j in range(K):
        v = alpha[L - 1, j] + T[j, stop]
        if v > m:
            m = v
    s = 0.0
    for j in range(K):
        s += exp(alpha[L - 1, j] + T[j, stop] - m)
    return alpha_arr, m + log(s)


def backward(double[:, ::1] E, double[:, ::1] T):
    cdef Py_ssize_t L = E.shape[0], K = E.shape[1]
    cdef Py_ssize_t stop = K + 1
    cdef Py_ssize_t t, i, j
    cdef double m, s, v
    beta_arr = np.empty((L, K), dtype=np.float64)
    cdef double[:, ::1] beta = beta_arr
    for i in range(K):
        beta[L - 1, i] = T[i, stop]
    for t in range(L - 2, -1, -1):
        for i in range(K):
            m = -INFINITY
            for j in range(K):
                v = T[i, j] + E[t + 1, j] + beta[t + 1, j]
                if v > m:
                    m = v
            s = 0.0
            for j in range(K):
                s += exp(T[i, j] + E[t + 1, j] + beta[t + 1, j] - m)
            beta[t, i] = m + log(s)
    return beta_arr


def viterbi(double[:, ::1] E, double[:, ::1] T):
    cdef Py_ssize_t L = E.shape[0], K = E.shape[1]
    cdef Py_ssize_t start = K, stop = K + 1
    cdef Py_ssize_t t, i, j, arg
    cdef double m, v
    delta_arr = np.empty((2, K), dtype=np.float64)
    back_arr = np.zeros((L, K), dtype=np.int64)
    path_arr = np.empty(L, dtype=np.int64)
    cdef double[:, ::1] delta = delta_arr
    cdef long long[:, ::1] back = back_arr
    cdef long long[::1] path = path_arr
    cdef int cur = 0, prev
    for j in range(K):
        delta[0, j] = T[start, j] + E[0, j]
    for t in range(1, L):
        prev = cur
        cur = 1 - cur
        for j in range(K):
            m = -INFINITY
            arg = 0
            for i in range(K):
                v = delta[prev, i] + T[i, j]
                # strict comparison keeps the lowest tag id on ties
                if v > m:
                    m = v
                    arg = i
            back[t, j] = arg
            delta[cur, j] = m + E[t, j]
    m = -INFINITY
    arg = 0
    for j in range(K):
        v = delta[cur, j] + T[j, stop]
        if v > m:
            m = v
            arg = j
    path[L - 1] = arg
    for t in range(L - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path_arr, m
