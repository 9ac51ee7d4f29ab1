# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled objective-field kernel (see _numpy.py for the reference)."""
import numpy as np


def path_objective(double complex[::1] corr,
                   int[::1] n0,
                   double[:, ::1] taps,
                   double[::1] energy,
                   double complex[::1] cross_out,
                   double[::1] ll_out):
    cdef Py_ssize_t n_cells = n0.shape[0]
    cdef Py_ssize_t n_taps = taps.shape[1]
    cdef Py_ssize_t c, t, base
    cdef double re, im, w, e
    cdef double complex v
    with nogil:
        for c in range(n_cells):
            base = n0[c]
            re = 0.0
            im = 0.0
            for t in range(n_taps):
                w = taps[c, t]
                v = corr[base + t]
                re += w * v.real
                im += w * v.imag
            cross_out[c] = re + 1j * im
            e = energy[c]
            if e > 0.0:
                ll_out[c] = 0.5 * (re * re + im * im) / e
            else:
                ll_out[c] = 0.0
    return np.asarray(cross_out), np.asarray(ll_out)
