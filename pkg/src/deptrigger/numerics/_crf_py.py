"""Reference CRF kernels in numpy; used when the compiled module is unavailable.

Emissions ``E`` are (L, K); transitions ``T`` are (K+2, K+2) with START = K and
STOP = K + 1.  ``T[i, j]`` scores moving from tag i to tag j.
"""
import numpy as np


def _lse_cols(M):
    m = M.max(axis=0)
    return m + np.log(np.exp(M - m).sum(axis=0))


def _lse_rows(M):
    m = M.max(axis=1)
    return m + np.log(np.exp(M - m[:, None]).sum(axis=1))


def forward(E, T):
    L, K = E.shape
    start, stop = K, K + 1
    trans = T[:K, :K]
    alpha = np.empty((L, K))
    alpha[0] = T[start, :K] + E[0]
    for t in range(1, L):
        alpha[t] = E[t] + _lse_cols(alpha[t - 1][:, None] + trans)
    last = alpha[L - 1] + T[:K, stop]
    m = last.max()
    return alpha, float(m + np.log(np.exp(last - m).sum()))


def backward(E, T):
    L, K = E.shape
    stop = K + 1
    trans = T[:K, :K]
    beta = np.empty((L, K))
    beta[L - 1] = T[:K, stop]
    for t in range(L - 2, -1, -1):
        beta[t] = _lse_rows(trans + (E[t + 1] + beta[t + 1])[None, :])
    return beta


def viterbi(E, T):
    L, K = E.shape
    start, stop = K, K + 1
    trans = T[:K, :K]
    delta = T[start, :K] + E[0]
    back = np.zeros((L, K), dtype=np.int64)
    for t in range(1, L):
        cand = delta[:, None] + trans
        # argmax returns the first maximum, i.e. the lowest previous tag id
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(K)] + E[t]
    final = delta + T[:K, stop]
    best = int(np.argmax(final))
    score = float(final[best])
    path = np.empty(L, dtype=np.int64)
    path[L - 1] = best
    for t in range(L - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, score
