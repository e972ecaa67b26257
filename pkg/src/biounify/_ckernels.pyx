# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: biquad cascade, radix-2 real FFT, fake quantization."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, nearbyint, M_PI

cnp.import_array()


def sosfilt(sos, x, zi):
    cdef const double[:, ::1] c = np.ascontiguousarray(sos, dtype=np.float64)
    y_arr = np.array(x, dtype=np.float64, copy=True, order="C")
    zf_arr = np.array(zi, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] y = y_arr
    cdef double[:, :, ::1] zf = zf_arr
    cdef Py_ssize_t rows = y.shape[0], n = y.shape[1], ns = c.shape[0]
    cdef Py_ssize_t r, s, i
    cdef double b0, b1, b2, a1, a2, z0, z1, xi, yi
    with nogil:
        for r in range(rows):
            for s in range(ns):
                b0 = c[s, 0]; b1 = c[s, 1]; b2 = c[s, 2]
                a1 = c[s, 4]; a2 = c[s, 5]
                z0 = zf[r, s, 0]; z1 = zf[r, s, 1]
                for i in range(n):
                    xi = y[r, i]
                    yi = b0 * xi + z0
                    z0 = b1 * xi - a1 * yi + z1
                    z1 = b2 * xi - a2 * yi
                    y[r, i] = yi
                zf[r, s, 0] = z0
                zf[r, s, 1] = z1
    return y_arr, zf_arr


def rfft(x):
    cdef const double[:, ::1] src = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t rows = src.shape[0], n = src.shape[1]
    cdef Py_ssize_t m = n // 2 + 1
    cdef int bits = 0
    while (1 << bits) < n:
        bits += 1
    re_arr = np.empty((rows, n), dtype=np.float64)
    im_arr = np.zeros((rows, n), dtype=np.float64)
    cdef double[:, ::1] re = re_arr
    cdef double[:, ::1] im = im_arr
    cdef Py_ssize_t r, i, j, b, size, half, start, k
    cdef double wr, wi, tr, ti, ur, ui
    with nogil:
        for r in range(rows):
            for i in range(n):
                j = 0
                for b in range(bits):
                    j |= ((i >> b) & 1) << (bits - 1 - b)
                re[r, j] = src[r, i]
            size = 2
            while size <= n:
                half = size // 2
                for k in range(half):
                    wr = cos(2.0 * M_PI * k / size)
                    wi = -sin(2.0 * M_PI * k / size)
                    start = 0
                    while start < n:
                        i = start + k
                        j = i + half
                        tr = wr * re[r, j] - wi * im[r, j]
                        ti = wr * im[r, j] + wi * re[r, j]
                        ur = re[r, i]
                        ui = im[r, i]
                        re[r, i] = ur + tr
                        im[r, i] = ui + ti
                        re[r, j] = ur - tr
                        im[r, j] = ui - ti
                        start += size
                size *= 2
    return re_arr[:, :m].copy(), im_arr[:, :m].copy()


def fake_quant(x, scale, zero_point, double qmin, double qmax):
    cdef const double[:, ::1] src = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] s = np.ascontiguousarray(scale, dtype=np.float64)
    cdef const double[::1] zp = np.ascontiguousarray(zero_point, dtype=np.float64)
    cdef Py_ssize_t rows = src.shape[0], n = src.shape[1], r, i
    y_arr = np.empty((rows, n), dtype=np.float64)
    in_arr = np.empty((rows, n), dtype=np.uint8)
    cdef double[:, ::1] y = y_arr
    cdef unsigned char[:, ::1] inside = in_arr
    cdef double u, q
    with nogil:
        for r in range(rows):
            for i in range(n):
                u = src[r, i] / s[r] + zp[r]
                inside[r, i] = (u >= qmin) and (u <= qmax)
                q = nearbyint(u)
                if q < qmin:
                    q = qmin
                elif q > qmax:
                    q = qmax
                y[r, i] = (q - zp[r]) * s[r]
    return y_arr, in_arr.view(np.bool_)
