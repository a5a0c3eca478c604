# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled element kernels; drop-in for ``plapwave._kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, pow

cnp.import_array()


cdef inline double _spow(double x, double q) nogil:
    if x > 0.0:
        return pow(x, q)
    elif x < 0.0:
        return -pow(-x, q)
    return 0.0


cdef inline double _apow(double x, double q) nogil:
    if x == 0.0:
        return 0.0
    return pow(fabs(x), q)


def plap_energy(U, h, double p):
    cdef const double[::1] u = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[::1] hh = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t n = u.shape[0], e
    cdef double acc = 0.0, g
    with nogil:
        for e in range(n - 1):
            g = (u[e + 1] - u[e]) / hh[e]
            acc += hh[e] * _apow(g, p)
        acc += _apow(u[0], p) + _apow(u[n - 1], p)
    return acc


def plap_residual(U, h, double p):
    cdef const double[::1] u = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[::1] hh = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t n = u.shape[0], e
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] R = out
    cdef double flux
    with nogil:
        for e in range(n - 1):
            flux = _spow((u[e + 1] - u[e]) / hh[e], p - 1.0)
            R[e] -= flux
            R[e + 1] += flux
        R[0] += _spow(u[0], p - 1.0)
        R[n - 1] += _spow(u[n - 1], p - 1.0)
    return out


def plap_tangent(U, h, double p):
    cdef const double[::1] u = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[::1] hh = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t n = u.shape[0], e
    d = np.zeros(n, dtype=np.float64)
    o = np.empty(n - 1, dtype=np.float64)
    cdef double[::1] diag = d
    cdef double[::1] off = o
    cdef double k
    with nogil:
        for e in range(n - 1):
            k = (p - 1.0) * _apow((u[e + 1] - u[e]) / hh[e], p - 2.0) / hh[e]
            diag[e] += k
            diag[e + 1] += k
            off[e] = -k
        diag[0] += (p - 1.0) * _apow(u[0], p - 2.0)
        diag[n - 1] += (p - 1.0) * _apow(u[n - 1], p - 2.0)
    return d, o


def plap_residual_tangent(U, h, double p):
    cdef const double[::1] u = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[::1] hh = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t n = u.shape[0], e
    r = np.zeros(n, dtype=np.float64)
    d = np.zeros(n, dtype=np.float64)
    o = np.empty(n - 1, dtype=np.float64)
    cdef double[::1] R = r
    cdef double[::1] diag = d
    cdef double[::1] off = o
    cdef double g, ag, flux, k
    with nogil:
        for e in range(n - 1):
            g = (u[e + 1] - u[e]) / hh[e]
            ag = fabs(g)
            if ag > 0.0:
                k = pow(ag, p - 2.0)
                flux = k * g
                k = (p - 1.0) * k / hh[e]
            else:
                flux = 0.0
                k = 0.0
            R[e] -= flux
            R[e + 1] += flux
            diag[e] += k
            diag[e + 1] += k
            off[e] = -k
        R[0] += _spow(u[0], p - 1.0)
        R[n - 1] += _spow(u[n - 1], p - 1.0)
        diag[0] += (p - 1.0) * _apow(u[0], p - 2.0)
        diag[n - 1] += (p - 1.0) * _apow(u[n - 1], p - 2.0)
    return r, d, o
