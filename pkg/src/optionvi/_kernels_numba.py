"""Numba-jitted implementations of the hot sequence kernels.

Drop-in replacements for _kernels_numpy with identical signatures and
semantics; see that module for the contracts. fastmath stays off so results
are deterministic and match the reference path to rounding error.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def lstm_seq_forward(x, w_ih, w_hh, b):
    T = x.shape[0]
    H = w_hh.shape[0]
    pre_x = np.dot(x, w_ih)
    h = np.empty((T, H))
    c = np.empty((T, H))
    gates = np.empty((T, 4 * H))
    h_prev = np.zeros(H)
    c_prev = np.zeros(H)
    for t in range(T):
        pre = pre_x[t] + np.dot(h_prev, w_hh) + b
        for k in range(H):
            a = pre[k]
            if a >= 0.0:
                i = 1.0 / (1.0 + np.exp(-a))
            else:
                e = np.exp(a)
                i = e / (1.0 + e)
            a = pre[H + k]
            if a >= 0.0:
                f = 1.0 / (1.0 + np.exp(-a))
            else:
                e = np.exp(a)
                f = e / (1.0 + e)
            g = np.tanh(pre[2 * H + k])
            a = pre[3 * H + k]
            if a >= 0.0:
                o = 1.0 / (1.0 + np.exp(-a))
            else:
                e = np.exp(a)
                o = e / (1.0 + e)
            c_t = f * c_prev[k] + i * g
            gates[t, k] = i
            gates[t, H + k] = f
            gates[t, 2 * H + k] = g
            gates[t, 3 * H + k] = o
            c[t, k] = c_t
            h[t, k] = o * np.tanh(c_t)
        h_prev = h[t]
        c_prev = c[t]
    return h, gates, c


@njit(cache=True)
def lstm_seq_backward(dh_out, x, h, c, gates, w_ih, w_hh):
    T = dh_out.shape[0]
    H = dh_out.shape[1]
    dpre = np.empty((T, 4 * H))
    dh_carry = np.zeros(H)
    dc_carry = np.zeros(H)
    w_hh_t = np.ascontiguousarray(w_hh.T)
    for t in range(T - 1, -1, -1):
        for k in range(H):
            i = gates[t, k]
            f = gates[t, H + k]
            g = gates[t, 2 * H + k]
            o = gates[t, 3 * H + k]
            c_prev = c[t - 1, k] if t > 0 else 0.0
            tc = np.tanh(c[t, k])
            dh = dh_out[t, k] + dh_carry[k]
            do = dh * tc
            dc = dc_carry[k] + dh * o * (1.0 - tc * tc)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dc_carry[k] = dc * f
            dpre[t, k] = di * i * (1.0 - i)
            dpre[t, H + k] = df * f * (1.0 - f)
            dpre[t, 2 * H + k] = dg * (1.0 - g * g)
            dpre[t, 3 * H + k] = do * o * (1.0 - o)
        dh_carry = np.dot(dpre[t], w_hh_t)
    dx = np.dot(dpre, np.ascontiguousarray(w_ih.T))
    dw_ih = np.dot(np.ascontiguousarray(x.T), dpre)
    h_prev_mat = np.zeros((T, H))
    for t in range(1, T):
        h_prev_mat[t] = h[t - 1]
    dw_hh = np.dot(np.ascontiguousarray(h_prev_mat.T), dpre)
    db = np.empty(4 * H)
    for j in range(4 * H):
        s = 0.0
        for t in range(T):
            s += dpre[t, j]
        db[j] = s
    return dx, dw_ih, dw_hh, db


@njit(cache=True)
def adam_update(p, g, m, v, step, lr, beta1, beta2, eps_hat):
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    for k in range(p.shape[0]):
        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k]
        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k]
        p[k] -= lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + eps_hat)
