"""Time the fused predictor+sort step: compiled kernel vs numpy fallback.

Usage:
    python3 benchmarks/bench_step.py [--sizes 1024,8192,65536] [--steps 200]
                                     [--repeats 5] [--seed 0]

Each timing advances a smooth coupled state (lam = 1, Poisson forcing) the
requested number of steps through `step_arrays`, so the figure includes the
predictor arithmetic, the sort, and the phase anchoring, but no trajectory
bookkeeping.  Best-of-`repeats` wall time is reported per path along with
the per-step cost and the speedup.

The library itself dispatches by size (extension only up to
kernels._EXT_CUTOFF parcels, numpy above, where its vectorized introsort
wins).  This script lifts the cutoff for the "compiled" column so both
kernels are measured at every size; the crossover in the speedup column is
what the cutoff was read off from.
"""

import argparse
import math
import time

import numpy as np

from sortflow import kernels
from sortflow.core import ForcingSpec
from sortflow.kernels import ANCHOR_CODES, HAVE_SPEEDUPS, step_arrays


def advance(M, steps, force_numpy, seed):
    rng = np.random.default_rng(seed)
    a = (np.arange(M) + 0.5) / M
    xi = 0.05 * np.sin(2.0 * math.pi * a)
    Z = 0.1 * np.cos(2.0 * math.pi * a) + 0.01 * rng.standard_normal(M)
    grid = np.arange(M) / M
    noise = np.where(np.arange(M) % 2 == 0, -1.0, 1.0)
    h, lam, eps = 1e-3, 1.0, 0.05
    amp = math.sqrt(2.0 * eps * h)
    forcing = ForcingSpec.poisson(1.0)
    code = ANCHOR_CODES["mean-closest"]

    t0 = time.perf_counter()
    for _ in range(steps):
        fxi = forcing.apply(xi)
        xi, Z, _, _, _ = step_arrays(
            xi, Z, noise, grid, h, lam, amp, fxi, code, force_numpy=force_numpy
        )
    return time.perf_counter() - t0


def advance_compiled(M, steps, seed):
    saved = kernels._EXT_CUTOFF
    kernels._EXT_CUTOFF = 1 << 62
    try:
        return advance(M, steps, False, seed)
    finally:
        kernels._EXT_CUTOFF = saved


def best_of(repeats, fn):
    return min(fn() for _ in range(repeats))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="1024,8192,65536",
                    help="comma-separated parcel counts")
    ap.add_argument("--steps", type=int, default=200, help="steps per timing")
    ap.add_argument("--repeats", type=int, default=5, help="timings per cell")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    sizes = [int(tok) for tok in args.sizes.split(",")]

    if not HAVE_SPEEDUPS:
        print("note: compiled kernel unavailable, both columns run the numpy path")
    else:
        print(f"note: library dispatch uses the extension for M <= "
              f"{kernels._EXT_CUTOFF}; this table forces each path")
    print(f"{'M':>8}  {'numpy':>12}  {'compiled':>12}  {'us/step np':>11}  "
          f"{'us/step ext':>11}  {'speedup':>7}")
    for M in sizes:
        # warm both paths once so allocation and code paths are hot
        advance(M, 2, True, args.seed)
        advance_compiled(M, 2, args.seed)
        t_np = best_of(args.repeats, lambda: advance(M, args.steps, True, args.seed))
        t_ext = best_of(args.repeats,
                        lambda: advance_compiled(M, args.steps, args.seed))
        print(f"{M:>8}  {t_np:>11.4f}s  {t_ext:>11.4f}s  "
              f"{1e6 * t_np / args.steps:>11.1f}  {1e6 * t_ext / args.steps:>11.1f}  "
              f"{t_np / t_ext:>6.2f}x")


if __name__ == "__main__":
    main()
