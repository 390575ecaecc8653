"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``IVETT_FORCE_PYTHON=1`` is set before import, the numpy
implementations in ``_pykernels`` are used. Both expose the same functions.
"""
import os

from . import _pykernels as fallback

compiled = None
if os.environ.get("IVETT_FORCE_PYTHON") != "1":
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

active = compiled if compiled is not None else fallback
BACKEND = active.BACKEND

philox4x64 = active.philox4x64
counter_uniforms = active.counter_uniforms
expit = active.expit
untreated_weights = active.untreated_weights
binary_ratio = active.binary_ratio

__all__ = ["BACKEND", "active", "compiled", "fallback", "philox4x64",
           "counter_uniforms", "expit", "untreated_weights", "binary_ratio"]
