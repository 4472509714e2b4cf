# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row kernels: softmax, layer norm and exact GELU.

Every function works on C-contiguous 2D arrays of shape (rows, n) and
allocates its outputs; the Python wrapper in ``kernels/__init__.py`` does
the reshaping.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expf, sqrt, erf, M_SQRT1_2, M_PI

cnp.import_array()

ctypedef fused real:
    float
    double


def softmax_fwd(real[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    out_arr = np.empty((rows, n), dtype=np.asarray(x).dtype)
    cdef real[:, ::1] y = out_arr
    cdef double s
    cdef real mx
    with nogil:
        for i in range(rows):
            mx = x[i, 0]
            for j in range(1, n):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(n):
                if real is float:
                    y[i, j] = expf(x[i, j] - mx)
                else:
                    y[i, j] = exp(x[i, j] - mx)
                s += y[i, j]
            s = 1.0 / s
            for j in range(n):
                y[i, j] = <real>(y[i, j] * s)
    return out_arr


def softmax_bwd(real[:, ::1] y, real[:, ::1] gy):
    cdef Py_ssize_t rows = y.shape[0], n = y.shape[1], i, j
    out_arr = np.empty((rows, n), dtype=np.asarray(y).dtype)
    cdef real[:, ::1] gx = out_arr
    cdef double dot
    for i in range(rows):
        dot = 0.0
        for j in range(n):
            dot += y[i, j] * gy[i, j]
        for j in range(n):
            gx[i, j] = <real>(y[i, j] * (gy[i, j] - dot))
    return out_arr


def layernorm_fwd(real[:, ::1] x, real[::1] gamma, real[::1] beta, double eps):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    dt = np.asarray(x).dtype
    y_arr = np.empty((rows, n), dtype=dt)
    xhat_arr = np.empty((rows, n), dtype=dt)
    rstd_arr = np.empty(rows, dtype=dt)
    cdef real[:, ::1] y = y_arr
    cdef real[:, ::1] xhat = xhat_arr
    cdef real[::1] rstd = rstd_arr
    cdef double mean, var, d, r
    for i in range(rows):
        mean = 0.0
        for j in range(n):
            mean += x[i, j]
        mean /= n
        var = 0.0
        for j in range(n):
            d = x[i, j] - mean
            var += d * d
        var /= n
        r = 1.0 / sqrt(var + eps)
        rstd[i] = <real>r
        for j in range(n):
            d = (x[i, j] - mean) * r
            xhat[i, j] = <real>d
            y[i, j] = <real>(d * gamma[j] + beta[j])
    return y_arr, xhat_arr, rstd_arr


def layernorm_bwd(real[:, ::1] gy, real[:, ::1] xhat, real[::1] rstd, real[::1] gamma):
    cdef Py_ssize_t rows = gy.shape[0], n = gy.shape[1], i, j
    dt = np.asarray(gy).dtype
    gx_arr = np.empty((rows, n), dtype=dt)
    cdef real[:, ::1] gx = gx_arr
    cdef double[::1] gg = np.zeros(n, dtype=np.float64)
    cdef double[::1] gb = np.zeros(n, dtype=np.float64)
    cdef double a, b, g
    for i in range(rows):
        a = 0.0
        b = 0.0
        for j in range(n):
            g = gy[i, j] * gamma[j]
            a += g
            b += g * xhat[i, j]
            gg[j] += gy[i, j] * xhat[i, j]
            gb[j] += gy[i, j]
        a /= n
        b /= n
        for j in range(n):
            g = gy[i, j] * gamma[j]
            gx[i, j] = <real>(rstd[i] * (g - a - xhat[i, j] * b))
    return gx_arr, np.asarray(gg).astype(dt), np.asarray(gb).astype(dt)


def gelu_fwd(real[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    out_arr = np.empty((rows, n), dtype=np.asarray(x).dtype)
    cdef real[:, ::1] y = out_arr
    cdef double v
    for i in range(rows):
        for j in range(n):
            v = x[i, j]
            y[i, j] = <real>(0.5 * v * (1.0 + erf(v * M_SQRT1_2)))
    return out_arr


def gelu_bwd(real[:, ::1] x, real[:, ::1] gy):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    out_arr = np.empty((rows, n), dtype=np.asarray(x).dtype)
    cdef real[:, ::1] gx = out_arr
    cdef double v, cdf, pdf
    cdef double inv_sqrt_2pi = 1.0 / sqrt(2.0 * M_PI)
    for i in range(rows):
        for j in range(n):
            v = x[i, j]
            cdf = 0.5 * (1.0 + erf(v * M_SQRT1_2))
            pdf = inv_sqrt_2pi * exp(-0.5 * v * v)
            gx[i, j] = <real>(gy[i, j] * (cdf + v * pdf))
    return out_arr
