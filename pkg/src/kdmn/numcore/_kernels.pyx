# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused LSTM pointwise kernels.

Single pass over the gate buffer per direction, no numpy temporaries.
Gate layout and arithmetic match kernels_py (sigmoid computed as
0.5*(tanh(0.5*x)+1) in both), so the backends agree to rounding error.
"""

from libc.math cimport tanh as ctanh


def lstm_pointwise_forward(double[:, ::1] gates, double[:, ::1] c_prev,
                           double[:, ::1] c_new, double[:, ::1] tanh_c,
                           double[:, ::1] h_new):
    cdef Py_ssize_t n = c_prev.shape[0]
    cdef Py_ssize_t h = c_prev.shape[1]
    cdef Py_ssize_t r, k
    cdef double i, f, g, o, c
    for r in range(n):
        for k in range(h):
            i = 0.5 * (ctanh(0.5 * gates[r, k]) + 1.0)
            f = 0.5 * (ctanh(0.5 * gates[r, h + k]) + 1.0)
            g = ctanh(gates[r, 2 * h + k])
            o = 0.5 * (ctanh(0.5 * gates[r, 3 * h + k]) + 1.0)
            gates[r, k] = i
            gates[r, h + k] = f
            gates[r, 2 * h + k] = g
            gates[r, 3 * h + k] = o
            c = f * c_prev[r, k] + i * g
            c_new[r, k] = c
            c = ctanh(c)
            tanh_c[r, k] = c
            h_new[r, k] = o * c


def lstm_pointwise_backward(double[:, ::1] acts, double[:, ::1] c_prev,
                            double[:, ::1] tanh_c, double[:, ::1] dh,
                            double[:, ::1] dc, double[:, ::1] dgates_out,
                            double[:, ::1] dc_prev_out):
    cdef Py_ssize_t n = c_prev.shape[0]
    cdef Py_ssize_t h = c_prev.shape[1]
    cdef Py_ssize_t r, k
    cdef double i, f, g, o, tc, dct
    for r in range(n):
        for k in range(h):
            i = acts[r, k]
            f = acts[r, h + k]
            g = acts[r, 2 * h + k]
            o = acts[r, 3 * h + k]
            tc = tanh_c[r, k]
            dct = dc[r, k] + dh[r, k] * o * (1.0 - tc * tc)
            dgates_out[r, k] = dct * g * i * (1.0 - i)
            dgates_out[r, h + k] = dct * c_prev[r, k] * f * (1.0 - f)
            dgates_out[r, 2 * h + k] = dct * i * (1.0 - g * g)
            dgates_out[r, 3 * h + k] = dh[r, k] * tc * o * (1.0 - o)
            dc_prev_out[r, k] = dct * f
