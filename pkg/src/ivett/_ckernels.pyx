# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Must stay output-compatible with ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.stdint cimport uint64_t

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    static inline uint64_t ivett_mulhilo64(uint64_t a, uint64_t b, uint64_t *hi) {
        __uint128_t p = (__uint128_t)a * (__uint128_t)b;
        *hi = (uint64_t)(p >> 64);
        return (uint64_t)p;
    }
    """
    uint64_t ivett_mulhilo64(uint64_t a, uint64_t b, uint64_t *hi) nogil

DEF PHILOX_M0 = 0xD2E7470EE14C6C93
DEF PHILOX_M1 = 0xCA5A826395121157
DEF PHILOX_W0 = 0x9E3779B97F4A7C15
DEF PHILOX_W1 = 0xBB67AE8584CAA73B

BACKEND = "compiled"


cdef inline void _philox_block(uint64_t c0, uint64_t c1, uint64_t c2, uint64_t c3,
                               uint64_t k0, uint64_t k1, uint64_t *out) noexcept nogil:
    cdef uint64_t hi0, lo0, hi1, lo1
    cdef int r
    for r in range(10):
        lo0 = ivett_mulhilo64(<uint64_t>PHILOX_M0, c0, &hi0)
        lo1 = ivett_mulhilo64(<uint64_t>PHILOX_M1, c2, &hi1)
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = k0 + <uint64_t>PHILOX_W0
        k1 = k1 + <uint64_t>PHILOX_W1
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3


def philox4x64(const uint64_t[:, ::1] counters, uint64_t key0, uint64_t key1):
    cdef Py_ssize_t n = counters.shape[0], i
    out = np.empty((n, 4), dtype=np.uint64)
    cdef uint64_t[:, ::1] o = out
    with nogil:
        for i in range(n):
            _philox_block(counters[i, 0], counters[i, 1], counters[i, 2], counters[i, 3],
                          key0, key1, &o[i, 0])
    return out


def counter_uniforms(uint64_t seed, uint64_t domain, const uint64_t[::1] index, int nblocks):
    cdef Py_ssize_t n = index.shape[0], i
    cdef int b, j
    cdef uint64_t words[4]
    out = np.empty((n, 4 * nblocks), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double scale = 1.0 / 9007199254740992.0
    with nogil:
        for i in range(n):
            for b in range(nblocks):
                _philox_block(index[i], <uint64_t>b, 0, 0, seed, domain, words)
                for j in range(4):
                    o[i, 4 * b + j] = <double>(words[j] >> 11) * scale
    return out


def expit(const double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    cdef double e
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            if x[i] >= 0:
                o[i] = 1.0 / (1.0 + exp(-x[i]))
            else:
                e = exp(x[i])
                o[i] = e / (1.0 + e)
    return out


def untreated_weights(const double[::1] lin, const double[::1] a, double floor):
    cdef Py_ssize_t n = lin.shape[0], i
    cdef double cap = 1.0 / floor, w
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            if a[i] != 0.0:
                o[i] = 0.0
            elif lin[i] > 50.0:
                o[i] = cap
            else:
                w = 1.0 + exp(lin[i])
                o[i] = (1.0 - a[i]) * (w if w < cap else cap)
    return out


def binary_ratio(const double[::1] alpha1, const double[::1] p,
                 const double[::1] g1, const double[::1] g0):
    cdef Py_ssize_t n = p.shape[0], i
    cdef double t
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            t = exp(alpha1[i]) * p[i]
            o[i] = (t * g1[i] + (1.0 - p[i]) * g0[i]) / (t + 1.0 - p[i])
    return out
