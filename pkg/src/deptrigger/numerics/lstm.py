"""Single-direction LSTM and BiLSTM with hand-written backprop through time.

Gate rows are stacked in the order input, forget, cell, output:
``W`` is (4*d_h, d_in), ``U`` is (4*d_h, d_h), ``b`` is (4*d_h,).
"""
from __future__ import annotations

from typing import Dict

import numpy as np

from .core import ParamStore, sigmoid


def add_lstm_params(store: ParamStore, prefix: str, d_in: int, d_h: int) -> None:
    store.add(f"{prefix}.W", (4 * d_h, d_in), fan_in=d_in)
    store.add(f"{prefix}.U", (4 * d_h, d_h), fan_in=d_h)
    store.add(f"{prefix}.b", (4 * d_h,), zeros=True)


def add_bilstm_params(store: ParamStore, prefix: str, d_in: int, d_h: int) -> None:
    add_lstm_params(store, f"{prefix}.fwd", d_in, d_h)
    add_lstm_params(store, f"{prefix}.bwd", d_in, d_h)


def lstm_forward(W: np.ndarray, U: np.ndarray, b: np.ndarray, X: np.ndarray):
    """Run the recurrence from zero initial states; returns (H, cache)."""
    L = X.shape[0]
    d_h = U.shape[1]
    if X.ndim != 2 or X.shape[1] != W.shape[1]:
        raise ValueError(f"input of shape {X.shape} does not match W {W.shape}")
    pre_x = X @ W.T + b
    H = np.zeros((L, d_h))
    C = np.zeros((L, d_h))
    gates = np.zeros((L, 4 * d_h))
    h = np.zeros(d_h)
    c = np.zeros(d_h)
    for t in range(L):
        a = pre_x[t] + U @ h
        i = sigmoid(a[:d_h])
        f = sigmoid(a[d_h:2 * d_h])
        g = np.tanh(a[2 * d_h:3 * d_h])
        o = sigmoid(a[3 * d_h:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, :d_h] = i
        gates[t, d_h:2 * d_h] = f
        gates[t, 2 * d_h:3 * d_h] = g
        gates[t, 3 * d_h:] = o
        C[t] = c
        H[t] = h
    return H, (X, H, C, gates)


def lstm_backward(W: np.ndarray, U: np.ndarray, cache, dH: np.ndarray):
    """Returns (dX, dW, dU, db) for upstream gradient ``dH`` on every output."""
    X, H, C, gates = cache
    L, d_h = H.shape
    dA = np.zeros((L, 4 * d_h))
    dh_next = np.zeros(d_h)
    dc_next = np.zeros(d_h)
    for t in range(L - 1, -1, -1):
        i = gates[t, :d_h]
        f = gates[t, d_h:2 * d_h]
        g = gates[t, 2 * d_h:3 * d_h]
        o = gates[t, 3 * d_h:]
        tc = np.tanh(C[t])
        c_prev = C[t - 1] if t > 0 else np.zeros(d_h)
        dh = dH[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = dA[t]
        da[:d_h] = dc * g * i * (1.0 - i)
        da[d_h:2 * d_h] = dc * c_prev * f * (1.0 - f)
        da[2 * d_h:3 * d_h] = dc * i * (1.0 - g * g)
        da[3 * d_h:] = dh * tc * o * (1.0 - o)
        dh_next = U.T @ da
        dc_next = dc * f
    H_prev = np.vstack([np.zeros((1, d_h)), H[:-1]])
    dW = dA.T @ X
    dU = dA.T @ H_prev
    db = dA.sum(axis=0)
    dX = dA @ W
    return dX, dW, dU, db


def bilstm_encode(store: ParamStore, prefix: str, X: np.ndarray):
    """Encode ``X`` (L x d_in) into L x 2*d_h; row t is [forward_t; backward_t]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("bilstm_encode needs a non-empty L x d_in matrix")
    p = store.params
    Hf, cf = lstm_forward(p[f"{prefix}.fwd.W"], p[f"{prefix}.fwd.U"], p[f"{prefix}.fwd.b"], X)
    Hb_rev, cb = lstm_forward(p[f"{prefix}.bwd.W"], p[f"{prefix}.bwd.U"], p[f"{prefix}.bwd.b"], X[::-1])
    H = np.hstack([Hf, Hb_rev[::-1]])
    return H, (cf, cb)


def bilstm_backward(store: ParamStore, prefix: str, cache, dH: np.ndarray,
                    accumulate: bool = True) -> np.ndarray:
    """Backprop ``dH``; adds parameter gradients to ``store.grads`` and returns dX."""
    cf, cb = cache
    p = store.params
    d_h = p[f"{prefix}.fwd.U"].shape[1]
    dXf, dWf, dUf, dbf = lstm_backward(p[f"{prefix}.fwd.W"], p[f"{prefix}.fwd.U"], cf, dH[:, :d_h])
    dXb, dWb, dUb, dbb = lstm_backward(p[f"{prefix}.bwd.W"], p[f"{prefix}.bwd.U"], cb, dH[::-1, d_h:])
    if accumulate:
        g: Dict[str, np.ndarray] = store.grads
        g[f"{prefix}.fwd.W"] += dWf
        g[f"{prefix}.fwd.U"] += dUf
        g[f"{prefix}.fwd.b"] += dbf
        g[f"{prefix}.bwd.W"] += dWb
        g[f"{prefix}.bwd.U"] += dUb
        g[f"{prefix}.bwd.b"] += dbb
    return dXf + dXb[::-1]
