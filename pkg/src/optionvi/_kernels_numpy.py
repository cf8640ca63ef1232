"""Pure-numpy reference implementations of the hot sequence kernels.

Same contracts as the numba variants in _kernels_numba.py; the backend module
picks one pair at import time. All arrays are float64 and C-contiguous.

LSTM weight layout is input-major: w_ih is (D, 4H), w_hh is (H, 4H), bias is
(4H,), with gate blocks ordered [input, forget, cell, output] along the 4H
axis. Initial hidden and cell states are zero.
"""

import numpy as np


def _sigmoid(x):
    # Piecewise form avoids exp overflow for large negative inputs.
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_seq_forward(x, w_ih, w_hh, b):
    """Run one LSTM layer over a full sequence.

    x: (T, D) inputs. Returns (h, gates, c) where h is (T, H) hidden states,
    gates is (T, 4H) post-activation gate values and c is (T, H) cell states;
    gates and c are the stash consumed by lstm_seq_backward.
    """
    T = x.shape[0]
    H = w_hh.shape[0]
    pre_x = x @ w_ih  # one gemm for all steps; rows stay independent
    h = np.empty((T, H))
    c = np.empty((T, H))
    gates = np.empty((T, 4 * H))
    h_prev = np.zeros(H)
    c_prev = np.zeros(H)
    for t in range(T):
        pre = pre_x[t] + h_prev @ w_hh + b
        i = _sigmoid(pre[0:H])
        f = _sigmoid(pre[H : 2 * H])
        g = np.tanh(pre[2 * H : 3 * H])
        o = _sigmoid(pre[3 * H : 4 * H])
        c_t = f * c_prev + i * g
        h_t = o * np.tanh(c_t)
        gates[t, 0:H] = i
        gates[t, H : 2 * H] = f
        gates[t, 2 * H : 3 * H] = g
        gates[t, 3 * H : 4 * H] = o
        c[t] = c_t
        h[t] = h_t
        h_prev = h_t
        c_prev = c_t
    return h, gates, c


def lstm_seq_backward(dh_out, x, h, c, gates, w_ih, w_hh):
    """Backprop through lstm_seq_forward.

    dh_out: (T, H) gradient w.r.t. the hidden-state sequence. Returns
    (dx, dw_ih, dw_hh, db). The recurrent loop only produces the gate
    pre-activation gradients; all weight gradients are batched gemms after it.
    """
    T, H = dh_out.shape
    dpre = np.empty((T, 4 * H))
    dh_carry = np.zeros(H)
    dc_carry = np.zeros(H)
    for t in range(T - 1, -1, -1):
        i = gates[t, 0:H]
        f = gates[t, H : 2 * H]
        g = gates[t, 2 * H : 3 * H]
        o = gates[t, 3 * H : 4 * H]
        c_prev = c[t - 1] if t > 0 else np.zeros(H)
        tc = np.tanh(c[t])
        dh = dh_out[t] + dh_carry
        do = dh * tc
        dc = dc_carry + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc_carry = dc * f
        dpre[t, 0:H] = di * i * (1.0 - i)
        dpre[t, H : 2 * H] = df * f * (1.0 - f)
        dpre[t, 2 * H : 3 * H] = dg * (1.0 - g * g)
        dpre[t, 3 * H : 4 * H] = do * o * (1.0 - o)
        dh_carry = dpre[t] @ w_hh.T
    dx = dpre @ w_ih.T
    dw_ih = x.T @ dpre
    h_prev_mat = np.vstack((np.zeros((1, H)), h[:-1]))
    dw_hh = h_prev_mat.T @ dpre
    db = dpre.sum(axis=0)
    return dx, dw_ih, dw_hh, db


def adam_update(p, g, m, v, step, lr, beta1, beta2, eps_hat):
    """One bias-corrected Adam step, in place on flat views p, m, v."""
    m[:] = beta1 * m + (1.0 - beta1) * g
    v[:] = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    p -= lr * m_hat / (np.sqrt(v_hat) + eps_hat)
