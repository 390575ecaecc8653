"""Pure numpy implementations of the hot kernels.

Integer outputs (Philox words, uniforms) are bit-identical to ``_ckernels``;
floating-point kernels agree to a few ulps.
"""
import numpy as np
from scipy.special import expit as _expit

BACKEND = "python"

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)


def _mulhilo(a, b):
    # 64x64 -> 128 multiply assembled from 32-bit limbs
    alo = a & _M32
    ahi = a >> _S32
    blo = b & _M32
    bhi = b >> _S32
    ll = alo * blo
    lh = alo * bhi
    hl = ahi * blo
    hh = ahi * bhi
    cross = (ll >> _S32) + (lh & _M32) + (hl & _M32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (cross >> _S32)
    return hi, a * b


def _philox_columns(c0, c1, c2, c3, key0, key1):
    k0 = np.full_like(c0, key0)
    k1 = np.full_like(c0, key1)
    with np.errstate(over="ignore"):
        for _ in range(10):
            hi0, lo0 = _mulhilo(c0, _M0)
            hi1, lo1 = _mulhilo(c2, _M1)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + _W0
            k1 = k1 + _W1
    return c0, c1, c2, c3


def philox4x64(counters, key0, key1):
    counters = np.ascontiguousarray(counters, dtype=np.uint64)
    cols = _philox_columns(*(counters[:, j].copy() for j in range(4)),
                           np.uint64(key0), np.uint64(key1))
    return np.stack(cols, axis=1)


def counter_uniforms(seed, domain, index, nblocks):
    index = np.ascontiguousarray(index, dtype=np.uint64)
    n = index.shape[0]
    out = np.empty((n, 4 * nblocks), dtype=np.float64)
    zero = np.zeros(n, dtype=np.uint64)
    for b in range(nblocks):
        words = _philox_columns(index, np.full(n, b, dtype=np.uint64), zero, zero,
                                np.uint64(seed), np.uint64(domain))
        for j, w in enumerate(words):
            out[:, 4 * b + j] = (w >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return out


def expit(x):
    return _expit(np.asarray(x, dtype=np.float64))


def untreated_weights(lin, a, floor):
    lin = np.asarray(lin, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    with np.errstate(over="ignore"):
        w = np.minimum(1.0 + np.exp(np.minimum(lin, 50.0)), 1.0 / floor)
    return np.where(a != 0.0, 0.0, (1.0 - a) * w)


def binary_ratio(alpha1, p, g1, g0):
    t = np.exp(alpha1) * p
    return (t * g1 + (1.0 - p) * g0) / (t + 1.0 - p)
