"""Time the compiled kernels against the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--n 1000000] [--repeat 5]

Each kernel is checked for agreement between the two backends before timing.
An end-to-end row times ``generate`` plus a DR fit under each backend in a
fresh interpreter, since the backend is fixed at import.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ivett import kernels

END_TO_END = """
import time
from ivett.estimators import estimate_dr
from ivett.kernels import BACKEND
from ivett.sim import DgpSpec, generate, scenario_spec
t = time.perf_counter()
ds = generate(DgpSpec.binary(), {n}, 7)
estimate_dr(ds, scenario_spec("i"))
print(BACKEND, time.perf_counter() - t)
"""


def _cases(n):
    r = np.random.default_rng(0)
    lin = r.normal(size=n)
    a = (r.uniform(size=n) < 0.4).astype(np.float64)
    p = r.uniform(0.05, 0.95, size=n)
    g1, g0 = r.normal(size=n), r.normal(size=n)
    counters = r.integers(0, 2 ** 63, size=(n // 4, 4), dtype=np.uint64)
    index = np.arange(n // 4, dtype=np.uint64)
    return {
        "expit": (lin,),
        "untreated_weights": (lin, a, 1e-6),
        "binary_ratio": (np.full(n, -0.6), p, g1, g0),
        "philox4x64": (counters, np.uint64(123), np.uint64(456)),
        "counter_uniforms": (2024, 3, index, 2),
    }


def _time(f, args, repeat):
    return min(timeit.repeat(lambda: f(*args), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end-n", type=int, default=200_000)
    args = ap.parse_args(argv)

    if kernels.compiled is None:
        print("compiled extension not importable; only the fallback is available")
        return 1
    print(f"{'kernel':<20}{'compiled ms':>14}{'python ms':>14}{'speedup':>10}")
    for name, case in _cases(args.n).items():
        fc, fp = getattr(kernels.compiled, name), getattr(kernels.fallback, name)
        np.testing.assert_allclose(np.asarray(fc(*case)), np.asarray(fp(*case)),
                                   rtol=1e-12, atol=1e-15)
        tc = _time(fc, case, args.repeat)
        tp = _time(fp, case, args.repeat)
        print(f"{name:<20}{1e3 * tc:>14.2f}{1e3 * tp:>14.2f}{tp / tc:>10.1f}")

    code = END_TO_END.format(n=args.end_to_end_n)
    rows = {}
    for env in ({}, {"IVETT_FORCE_PYTHON": "1"}):
        out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                             env={**os.environ, **env}, check=True)
        backend, secs = out.stdout.split()
        rows[backend] = float(secs)
    print(f"{'generate + DR fit':<20}{1e3 * rows['compiled']:>14.0f}"
          f"{1e3 * rows['python']:>14.0f}{rows['python'] / rows['compiled']:>10.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
