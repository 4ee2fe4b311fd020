"""Pure-numpy GRU recurrence kernels.

Reference implementation of the fused sequence kernels. The compiled
extension ``_gru_ext`` exposes the same two functions with the same
argument layout; ``kernels.py`` picks one at import time.

Gate layout along the 3H axis is ``[z, r, n]``. ``gx`` already holds the
input projection plus input bias for every step, so the kernels only deal
with the recurrent half::

    gh  = W_h h_{t-1} + b_h
    z   = sigmoid(gx_z + gh_z)
    r   = sigmoid(gx_r + gh_r)
    n   = tanh(gx_n + r * gh_n)
    h_t = (1 - z) * n + z * h_{t-1}
"""

import numpy as np


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def gru_forward(gx, w_h, b_h, h0):
    """Run the recurrence over ``T`` steps.

    Returns ``(hs, z, r, n, ghn)`` where ``hs`` has shape ``(T + 1, H)`` with
    ``hs[0] == h0``; the remaining arrays are ``(T, H)`` caches for backward.
    """
    steps = gx.shape[0]
    hidden = h0.shape[0]
    hs = np.empty((steps + 1, hidden))
    z = np.empty((steps, hidden))
    r = np.empty((steps, hidden))
    n = np.empty((steps, hidden))
    ghn = np.empty((steps, hidden))
    hs[0] = h0
    for t in range(steps):
        h = hs[t]
        gh = w_h @ h + b_h
        z[t] = _sigmoid(gx[t, :hidden] + gh[:hidden])
        r[t] = _sigmoid(gx[t, hidden:2 * hidden] + gh[hidden:2 * hidden])
        ghn[t] = gh[2 * hidden:]
        n[t] = np.tanh(gx[t, 2 * hidden:] + r[t] * ghn[t])
        hs[t + 1] = (1.0 - z[t]) * n[t] + z[t] * h
    return hs, z, r, n, ghn


def gru_backward(dhs, w_h, hs, z, r, n, ghn):
    """Backpropagate ``dhs`` (gradient w.r.t. ``hs[1:]``) through the recurrence.

    Returns ``(dgx, dw_h, db_h, dh0)``.
    """
    steps, hidden = dhs.shape
    dgx = np.empty((steps, 3 * hidden))
    dw_h = np.zeros_like(w_h)
    db_h = np.zeros(3 * hidden)
    dh_next = np.zeros(hidden)
    for t in range(steps - 1, -1, -1):
        h_prev = hs[t]
        dh = dhs[t] + dh_next
        zt, rt, nt = z[t], r[t], n[t]
        dn = dh * (1.0 - zt)
        dz = dh * (h_prev - nt)
        da_n = dn * (1.0 - nt * nt)
        dr = da_n * ghn[t]
        da_z = dz * zt * (1.0 - zt)
        da_r = dr * rt * (1.0 - rt)
        dgh = np.concatenate([da_z, da_r, da_n * rt])
        dgx[t, :hidden] = da_z
        dgx[t, hidden:2 * hidden] = da_r
        dgx[t, 2 * hidden:] = da_n
        dw_h += np.outer(dgh, h_prev)
        db_h += dgh
        dh_next = dh * zt + w_h.T @ dgh
    return dgx, dw_h, db_h, dh_next
