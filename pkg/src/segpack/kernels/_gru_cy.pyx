# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twin of ``kernels.reference``: the sequential GRU hot loop.

Same calling convention and numerics as the reference module (see its
docstring); only the per-step loop runs in C here.  The input projections
and the chain rule through them stay in numpy on the caller's side.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()

NAME = "compiled"


cdef inline double _sigmoid(double x) noexcept nogil:
    return 1.0 / (1.0 + exp(-x))


def gru_forward(const double[:, :, ::1] xw, const unsigned char[:, ::1] resets,
                const double[:, :, ::1] u, const cnp.int64_t[::1] lengths):
    cdef Py_ssize_t B = xw.shape[0], T = xw.shape[1], H3 = xw.shape[2]
    cdef Py_ssize_t H = H3 // 3
    h_arr = np.zeros((B, T, H))
    gates_arr = np.zeros((B, T, H3))
    hp_arr = np.zeros(H)
    cdef double[:, :, ::1] h = h_arr
    cdef double[:, :, ::1] gates = gates_arr
    cdef double[::1] hp = hp_arr
    cdef Py_ssize_t b, t, j, k, L
    cdef double acc_z, acc_r, acc_c, z

    with nogil:
        for b in range(B):
            L = lengths[b]
            for t in range(L):
                if t == 0 or resets[b, t] == 1:
                    for k in range(H):
                        hp[k] = 0.0
                else:
                    for k in range(H):
                        hp[k] = h[b, t - 1, k]
                for j in range(H):
                    acc_z = xw[b, t, j]
                    acc_r = xw[b, t, H + j]
                    for k in range(H):
                        acc_z = acc_z + hp[k] * u[0, k, j]
                        acc_r = acc_r + hp[k] * u[1, k, j]
                    gates[b, t, j] = _sigmoid(acc_z)
                    gates[b, t, H + j] = _sigmoid(acc_r)
                for j in range(H):
                    acc_c = xw[b, t, 2 * H + j]
                    for k in range(H):
                        acc_c = acc_c + gates[b, t, H + k] * hp[k] * u[2, k, j]
                    gates[b, t, 2 * H + j] = tanh(acc_c)
                for j in range(H):
                    z = gates[b, t, j]
                    h[b, t, j] = (1.0 - z) * hp[j] + z * gates[b, t, 2 * H + j]
    return h_arr, gates_arr


def gru_backward(const double[:, :, ::1] dh, const double[:, :, ::1] h,
                 const double[:, :, ::1] gates, const unsigned char[:, ::1] resets,
                 const double[:, :, ::1] u, const cnp.int64_t[::1] lengths):
    cdef Py_ssize_t B = dh.shape[0], T = dh.shape[1], H = dh.shape[2]
    cdef Py_ssize_t H3 = 3 * H
    dxw_arr = np.zeros((B, T, H3))
    du_arr = np.zeros((3, H, H))
    gbuf_arr = np.zeros(H)
    hp_arr = np.zeros(H)
    dz_arr = np.zeros(H)
    dr_arr = np.zeros(H)
    dc_arr = np.zeros(H)
    drh_arr = np.zeros(H)
    carry_arr = np.zeros(H)
    cdef double[:, :, ::1] dxw = dxw_arr
    cdef double[:, :, ::1] du = du_arr
    cdef double[::1] gbuf = gbuf_arr
    cdef double[::1] hp = hp_arr
    cdef double[::1] dz = dz_arr
    cdef double[::1] dr = dr_arr
    cdef double[::1] dc = dc_arr
    cdef double[::1] drh = drh_arr
    cdef double[::1] carry = carry_arr
    cdef Py_ssize_t b, t, j, k, L
    cdef double z, r, c, acc, dhp

    with nogil:
        for b in range(B):
            L = lengths[b]
            for k in range(H):
                carry[k] = 0.0
            for t in range(L - 1, -1, -1):
                if t == 0 or resets[b, t] == 1:
                    for k in range(H):
                        hp[k] = 0.0
                else:
                    for k in range(H):
                        hp[k] = h[b, t - 1, k]
                for j in range(H):
                    gbuf[j] = dh[b, t, j] + carry[j]
                    z = gates[b, t, j]
                    c = gates[b, t, 2 * H + j]
                    dz[j] = gbuf[j] * (c - hp[j]) * z * (1.0 - z)
                    dc[j] = gbuf[j] * z * (1.0 - c * c)
                for k in range(H):
                    acc = 0.0
                    for j in range(H):
                        acc = acc + dc[j] * u[2, k, j]
                    drh[k] = acc
                for k in range(H):
                    r = gates[b, t, H + k]
                    dr[k] = drh[k] * hp[k] * r * (1.0 - r)
                for j in range(H):
                    dxw[b, t, j] = dz[j]
                    dxw[b, t, H + j] = dr[j]
                    dxw[b, t, 2 * H + j] = dc[j]
                for k in range(H):
                    for j in range(H):
                        du[0, k, j] = du[0, k, j] + hp[k] * dz[j]
                        du[1, k, j] = du[1, k, j] + hp[k] * dr[j]
                        du[2, k, j] = du[2, k, j] + gates[b, t, H + k] * hp[k] * dc[j]
                for k in range(H):
                    if t == 0 or resets[b, t] == 1:
                        carry[k] = 0.0
                    else:
                        z = gates[b, t, k]
                        r = gates[b, t, H + k]
                        dhp = gbuf[k] * (1.0 - z) + drh[k] * r
                        for j in range(H):
                            dhp = dhp + dz[j] * u[0, k, j] + dr[j] * u[1, k, j]
                        carry[k] = dhp
    return dxw_arr, du_arr
