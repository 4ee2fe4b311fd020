# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled GRU recurrence kernels (same contract as ``_gru_py``)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    return 0.5 * (tanh(0.5 * x) + 1.0)


def gru_forward(double[:, ::1] gx, double[:, ::1] w_h, double[::1] b_h, double[::1] h0):
    cdef Py_ssize_t steps = gx.shape[0]
    cdef Py_ssize_t hidden = h0.shape[0]
    hs_arr = np.empty((steps + 1, hidden))
    z_arr = np.empty((steps, hidden))
    r_arr = np.empty((steps, hidden))
    n_arr = np.empty((steps, hidden))
    ghn_arr = np.empty((steps, hidden))
    gh_arr = np.empty(3 * hidden)
    cdef double[:, ::1] hs = hs_arr
    cdef double[:, ::1] z = z_arr
    cdef double[:, ::1] r = r_arr
    cdef double[:, ::1] n = n_arr
    cdef double[:, ::1] ghn = ghn_arr
    cdef double[::1] gh = gh_arr
    cdef Py_ssize_t t, i, k
    cdef double acc, zt
    with nogil:
        for i in range(hidden):
            hs[0, i] = h0[i]
        for t in range(steps):
            for i in range(3 * hidden):
                acc = b_h[i]
                for k in range(hidden):
                    acc = acc + w_h[i, k] * hs[t, k]
                gh[i] = acc
            for i in range(hidden):
                zt = _sigmoid(gx[t, i] + gh[i])
                z[t, i] = zt
                r[t, i] = _sigmoid(gx[t, hidden + i] + gh[hidden + i])
                ghn[t, i] = gh[2 * hidden + i]
                n[t, i] = tanh(gx[t, 2 * hidden + i] + r[t, i] * ghn[t, i])
                hs[t + 1, i] = (1.0 - zt) * n[t, i] + zt * hs[t, i]
    return hs_arr, z_arr, r_arr, n_arr, ghn_arr


def gru_backward(double[:, ::1] dhs, double[:, ::1] w_h, double[:, ::1] hs,
                 double[:, ::1] z, double[:, ::1] r, double[:, ::1] n,
                 double[:, ::1] ghn):
    cdef Py_ssize_t steps = dhs.shape[0]
    cdef Py_ssize_t hidden = dhs.shape[1]
    dgx_arr = np.empty((steps, 3 * hidden))
    dw_arr = np.zeros((3 * hidden, hidden))
    db_arr = np.zeros(3 * hidden)
    dh_next_arr = np.zeros(hidden)
    dh_arr = np.empty(hidden)
    dgh_arr = np.empty(3 * hidden)
    cdef double[:, ::1] dgx = dgx_arr
    cdef double[:, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef double[::1] dh_next = dh_next_arr
    cdef double[::1] dh = dh_arr
    cdef double[::1] dgh = dgh_arr
    cdef Py_ssize_t t, i, k
    cdef double zt, rt, nt, dn, dz, da_n, dr, acc
    with nogil:
        for t in range(steps - 1, -1, -1):
            for i in range(hidden):
                dh[i] = dhs[t, i] + dh_next[i]
                zt = z[t, i]
                rt = r[t, i]
                nt = n[t, i]
                dn = dh[i] * (1.0 - zt)
                dz = dh[i] * (hs[t, i] - nt)
                da_n = dn * (1.0 - nt * nt)
                dr = da_n * ghn[t, i]
                dgh[i] = dz * zt * (1.0 - zt)
                dgh[hidden + i] = dr * rt * (1.0 - rt)
                dgh[2 * hidden + i] = da_n * rt
                dgx[t, i] = dgh[i]
                dgx[t, hidden + i] = dgh[hidden + i]
                dgx[t, 2 * hidden + i] = da_n
            for i in range(3 * hidden):
                db[i] += dgh[i]
                for k in range(hidden):
                    dw[i, k] += dgh[i] * hs[t, k]
            for k in range(hidden):
                acc = dh[k] * z[t, k]
                for i in range(3 * hidden):
                    acc = acc + w_h[i, k] * dgh[i]
                dh_next[k] = acc
    return dgx_arr, dw_arr, db_arr, dh_next_arr
