"""Pure-numpy GRU sequence kernels (reference implementation).

Weight packing: the three gate blocks are concatenated along columns in
the order [reset | update | candidate], i.e. ``wp = [W_r | W_z | W_h]``
of shape (d_in, 3*d) and ``up = [U_r | U_z | U_h]`` of shape (d, 3*d).

Gate recurrence (initial hidden state is zero):

    r_t = sigmoid(x_t W_r + h_{t-1} U_r + b_r)
    z_t = sigmoid(x_t W_z + h_{t-1} U_z + b_z)
    g_t = tanh(x_t W_h + (h_{t-1} * r_t) U_h + b_h)
    h_t = (1 - z_t) * h_{t-1} + z_t * g_t
"""

import numpy as np


def _sigmoid(x):
    out = np.exp(-np.abs(x))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + out[pos])
    out[~pos] = out[~pos] / (1.0 + out[~pos])
    return out


def gru_forward(x, wp, up, b):
    """Run the recurrence over a batch of sequences.

    x: (n, t, d_in); wp: (d_in, 3d); up: (d, 3d); b: (3d,).
    Returns (h, gates, hr) with h: (n, t, d), gates: (n, t, 3d) holding
    [r | z | g], and hr: (n, t, d) holding h_{t-1} * r_t (saved for the
    backward sweep).
    """
    n, t, d_in = x.shape
    d = up.shape[0]
    pre = (x.reshape(n * t, d_in) @ wp + b).reshape(n, t, 3 * d)
    u_rz = up[:, :2 * d]
    u_h = up[:, 2 * d:]
    h = np.empty((n, t, d))
    gates = np.empty((n, t, 3 * d))
    hr = np.empty((n, t, d))
    h_prev = np.zeros((n, d))
    for i in range(t):
        rz = _sigmoid(pre[:, i, :2 * d] + h_prev @ u_rz)
        r = rz[:, :d]
        z = rz[:, d:]
        hr_i = h_prev * r
        g = np.tanh(pre[:, i, 2 * d:] + hr_i @ u_h)
        h_i = (1.0 - z) * h_prev + z * g
        gates[:, i, :2 * d] = rz
        gates[:, i, 2 * d:] = g
        hr[:, i] = hr_i
        h[:, i] = h_i
        h_prev = h_i
    return h, gates, hr


def gru_backward(gh, x, wp, up, h, gates, hr):
    """Backpropagate through the recurrence.

    gh: (n, t, d) upstream gradient w.r.t. every output step.
    Returns (dx, dwp, dup, db).
    """
    n, t, d_in = x.shape
    d = up.shape[0]
    u_rz = up[:, :2 * d]
    u_h = up[:, 2 * d:]
    da = np.empty((n, t, 3 * d))
    dh = np.zeros((n, d))
    zeros = np.zeros((n, d))
    for i in range(t - 1, -1, -1):
        dh = dh + gh[:, i]
        h_prev = h[:, i - 1] if i > 0 else zeros
        r = gates[:, i, :d]
        z = gates[:, i, d:2 * d]
        g = gates[:, i, 2 * d:]
        da_z = dh * (g - h_prev) * z * (1.0 - z)
        da_g = dh * z * (1.0 - g * g)
        dh_next = dh * (1.0 - z)
        dhr = da_g @ u_h.T
        dh_next = dh_next + dhr * r
        da_r = dhr * h_prev * r * (1.0 - r)
        da[:, i, :d] = da_r
        da[:, i, d:2 * d] = da_z
        da[:, i, 2 * d:] = da_g
        dh = dh_next + da[:, i, :2 * d] @ u_rz.T
    da_flat = da.reshape(n * t, 3 * d)
    x_flat = x.reshape(n * t, d_in)
    dwp = x_flat.T @ da_flat
    db = da_flat.sum(axis=0)
    dx = (da_flat @ wp.T).reshape(n, t, d_in)
    h_prev_flat = np.concatenate(
        [np.zeros((n, 1, d)), h[:, :t - 1]], axis=1
    ).reshape(n * t, d)
    dup = np.empty_like(up)
    dup[:, :2 * d] = h_prev_flat.T @ da_flat[:, :2 * d]
    dup[:, 2 * d:] = hr.reshape(n * t, d).T @ da_flat[:, 2 * d:]
    return dx, dwp, dup, db
