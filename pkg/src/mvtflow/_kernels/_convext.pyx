# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled dilated 1-D convolution kernels (float32/float64).

Same calling convention as numpy_ops: padded channel-major input
(B, C_in, T_padded), weight (C_out, C_in, K), output (B, C_out, T).
"""

import numpy as np


ctypedef fused real:
    float
    double


def conv1d_forward(real[:, :, ::1] xp, real[:, :, ::1] w, real[::1] b,
                   int dilation, int t_out):
    cdef Py_ssize_t n_batch = xp.shape[0], c_in = xp.shape[1]
    cdef Py_ssize_t c_out = w.shape[0], k = w.shape[2]
    out_arr = np.empty((n_batch, c_out, t_out),
                       dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, ::1] y = out_arr
    cdef Py_ssize_t bi, o, i, tap, t, off
    cdef real wv, bias
    for bi in range(n_batch):
        for o in range(c_out):
            bias = b[o]
            for t in range(t_out):
                y[bi, o, t] = bias
            for i in range(c_in):
                for tap in range(k):
                    wv = w[o, i, tap]
                    off = tap * dilation
                    for t in range(t_out):
                        y[bi, o, t] += wv * xp[bi, i, t + off]
    return out_arr


def conv1d_backward_input(real[:, :, ::1] gy, real[:, :, ::1] w,
                          int dilation, int t_padded):
    cdef Py_ssize_t n_batch = gy.shape[0], c_out = gy.shape[1], t_out = gy.shape[2]
    cdef Py_ssize_t c_in = w.shape[1], k = w.shape[2]
    gx_arr = np.zeros((n_batch, c_in, t_padded),
                      dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, ::1] gxp = gx_arr
    cdef Py_ssize_t bi, o, i, tap, t, off
    cdef real wv
    for bi in range(n_batch):
        for o in range(c_out):
            for i in range(c_in):
                for tap in range(k):
                    wv = w[o, i, tap]
                    off = tap * dilation
                    for t in range(t_out):
                        gxp[bi, i, t + off] += wv * gy[bi, o, t]
    return gx_arr


def conv1d_backward_weight(real[:, :, ::1] xp, real[:, :, ::1] gy,
                           int dilation, int k):
    cdef Py_ssize_t n_batch = xp.shape[0], c_in = xp.shape[1]
    cdef Py_ssize_t c_out = gy.shape[1], t_out = gy.shape[2]
    dt = np.float32 if real is float else np.float64
    gw_arr = np.zeros((c_out, c_in, k), dtype=dt)
    gb_arr = np.zeros(c_out, dtype=dt)
    cdef real[:, :, ::1] gw = gw_arr
    cdef real[::1] gb = gb_arr
    cdef Py_ssize_t bi, o, i, tap, t, off
    cdef real acc
    for bi in range(n_batch):
        for o in range(c_out):
            acc = 0
            for t in range(t_out):
                acc += gy[bi, o, t]
            gb[o] += acc
            for i in range(c_in):
                for tap in range(k):
                    off = tap * dilation
                    acc = 0
                    for t in range(t_out):
                        acc += xp[bi, i, t + off] * gy[bi, o, t]
                    gw[o, i, tap] += acc
    return gw_arr, gb_arr
