"""Counter-based random streams on top of Philox4x64-10.

A stream is addressed by (seed, domain); record ``i`` always draws from
counter ``(i, block, 0, 0)``, so any subset of records can be regenerated
without touching the others.
"""
from __future__ import annotations

import numpy as np

from . import kernels

DOMAIN_DATA = 1
DOMAIN_ORACLE = 2
DOMAIN_DERIVE = 3

_U64 = (1 << 64) - 1


def _check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= _U64:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return seed


def derive_seed(master_seed, index) -> int:
    """Seed of replication ``index`` under ``master_seed`` (63-bit, JSON safe)."""
    master_seed = _check_seed(master_seed)
    ctr = np.array([[_check_seed(index), 0, 0, 0]], dtype=np.uint64)
    word = kernels.philox4x64(ctr, np.uint64(master_seed), np.uint64(DOMAIN_DERIVE))[0, 0]
    return int(word) >> 1


def uniforms(seed, domain, n: int, nblocks: int = 1, start: int = 0) -> np.ndarray:
    """Uniform doubles in [0, 1): an (n, 4 * nblocks) array for records start..start+n-1."""
    index = np.arange(start, start + n, dtype=np.uint64)
    return kernels.counter_uniforms(np.uint64(_check_seed(seed)), np.uint64(domain), index,
                                    nblocks)


def std_normal(u1, u2) -> np.ndarray:
    """Box-Muller transform of two uniform columns (cosine branch)."""
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
