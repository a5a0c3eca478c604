"""Compiled vs pure-Python element kernels, and one full integration per backend.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from plapwave import _kernels_py

try:
    from plapwave import _kernels
except ImportError:
    _kernels = None

INTEGRATE = """
import time, numpy as np
from plapwave import geometry as geo, solver as sol, kernels
from plapwave.sources import SourceSpec
b = geo.build_fem_basis(geo.build_mesh({n}))
pr = sol.ProblemSpec(p=2.5, basis=b, u0=geo.interpolate(b, lambda x: 0.5 + np.sin(np.pi * x)),
                     u1=geo.zero_field(b), T=0.5, dt=1e-3, src=SourceSpec("POWER", r=1.5, a=1.0))
t0 = time.perf_counter(); sol.integrate(pr); print(kernels.BACKEND, time.perf_counter() - t0)
"""


def time_kernel(mod, n, repeat):
    rng = np.random.default_rng(0)
    U = rng.standard_normal(n + 1)
    h = np.full(n, 1.0 / n)
    calls = {
        "energy": lambda: mod.plap_energy(U, h, 2.5),
        "residual": lambda: mod.plap_residual(U, h, 2.5),
        "residual+tangent": lambda: mod.plap_residual_tangent(U, h, 2.5),
    }
    out = {}
    for name, fn in calls.items():
        number = max(1, 20000 // n)
        out[name] = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
    return out


def time_integrate(n, pure):
    env = dict(os.environ, PLAPWAVE_PURE_PYTHON="1" if pure else "0")
    res = subprocess.run([sys.executable, "-c", INTEGRATE.format(n=n)], env=env,
                         capture_output=True, text=True, check=True)
    backend, secs = res.stdout.split()
    return backend, float(secs)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 64, 256, 1024])
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the Python kernels are available")
        return 1
    print(f"{'elements':>8}  {'kernel':<17} {'python [us]':>12} {'compiled [us]':>14} {'speedup':>8}")
    for n in args.sizes:
        py = time_kernel(_kernels_py, n, args.repeat)
        cc = time_kernel(_kernels, n, args.repeat)
        for name in py:
            print(f"{n:>8}  {name:<17} {py[name] * 1e6:12.2f} {cc[name] * 1e6:14.2f} "
                  f"{py[name] / cc[name]:8.1f}x")
    print()
    print(f"{'elements':>8}  {'integrate T=0.5, dt=1e-3':<26} {'seconds':>8}")
    for n in (16, 64):
        for pure in (True, False):
            backend, secs = time_integrate(n, pure)
            print(f"{n:>8}  {backend:<26} {secs:8.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
