"""Compare the compiled and numpy frequency-sweep kernels.

Run ``python3 benchmarks/bench_kernels.py``.  Both kernels evaluate
sigma_max(Cm diag(1/(i w - poles)) Bm) on the same grid; the script checks
that they agree and reports the best-of-``repeat`` wall time of each.
"""
import argparse
import sys
import timeit

import numpy as np

from hinfdamp import _kernels_py

try:
    from hinfdamp import _kernels as _compiled
except ImportError:
    _compiled = None


def problem(k, outputs, inputs, seed=0):
    rng = np.random.default_rng(seed)
    poles = -rng.uniform(1e-4, 1e-1, k) + 1j * rng.uniform(0.0, 2.0, k)
    Cm = np.ascontiguousarray(rng.standard_normal((outputs, k)) + 1j * rng.standard_normal((outputs, k)))
    Bm = np.ascontiguousarray(rng.standard_normal((k, inputs)) + 1j * rng.standard_normal((k, inputs)))
    return poles, Cm, Bm


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=4000, help="frequency grid size")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[20, 100, 400], help="number of modes")
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; only the numpy kernel is available")
    omegas = np.linspace(0.0, 2.0, args.points)
    print(f"{'modes':>6} {'shape':>7} {'numpy [s]':>11} {'cython [s]':>11} {'speedup':>8} {'max rel diff':>13}")
    for k in args.sizes:
        for outputs, inputs in ((4, 4), (20, 10)):
            poles, Cm, Bm = problem(k, outputs, inputs)
            py = _kernels_py.sigma_max_modal(omegas, poles, Cm, Bm)
            t_py = min(timeit.repeat(lambda: _kernels_py.sigma_max_modal(omegas, poles, Cm, Bm),
                                     number=1, repeat=args.repeat))
            if _compiled is None:
                print(f"{k:6d} {outputs:3d}x{inputs:<3d} {t_py:11.4f} {'-':>11} {'-':>8} {'-':>13}")
                continue
            cy = _compiled.sigma_max_modal(omegas, poles, Cm, Bm)
            t_cy = min(timeit.repeat(lambda: _compiled.sigma_max_modal(omegas, poles, Cm, Bm),
                                     number=1, repeat=args.repeat))
            diff = float(np.max(np.abs(cy - py) / np.maximum(np.abs(py), 1e-300)))
            print(f"{k:6d} {outputs:3d}x{inputs:<3d} {t_py:11.4f} {t_cy:11.4f} {t_py / t_cy:8.2f} {diff:13.2e}")
            if diff > 1e-10:
                print("kernels disagree", file=sys.stderr)
                return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
