"""Timing of the compiled path kernels against the vectorized numpy route.

Both backends integrate the same coupled workload (corrected Euler over the
reference grid plus the smoothed-noise Runge-Kutta route) on identical
increments, so the printed deviation is pure floating-point backend skew.

    python benchmarks/bench_kernels.py [--paths 256] [--steps 8192] [--repeat 3]

Select the fallback globally with WZSIM_DISABLE_NUMBA=1 (then only the
numpy row is meaningful).
"""

import argparse
import time

import numpy as np

from wzsim import _kernels
from wzsim.coeffs import CorrectionMatrix
from wzsim.core import RngStream, make_grid, sample_brownian_batch
from wzsim.noise import PiecewiseShape
from wzsim.registry import sin_bump_drift, sin_elliptic_diffusion
from wzsim.shapes import linear_shape
from wzsim.solvers import _stage_derivs, em_batch, rk4_batch


def timed(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--paths", type=int, default=256)
    ap.add_argument("--steps", type=int, default=8192)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    grid = make_grid(1.0, args.steps)
    n = args.steps // 16  # 16 reference cells per noise block
    drift = sin_bump_drift()
    sigma = sin_elliptic_diffusion(1.0, 0.5)
    half = CorrectionMatrix.half_identity(1)
    fam = PiecewiseShape(linear_shape())

    print(f"paths={args.paths} steps={args.steps} noise blocks={n} "
          f"numba={'on' if _kernels.NUMBA_ENABLED else 'off'}")
    w = sample_brownian_batch(grid, 1, RngStream(1, 0), args.paths)
    dw = np.diff(w, axis=1)
    x0 = np.zeros((args.paths, 1))
    vst = _stage_derivs(fam, w, n, 16, 0, n, 16)

    backends = ["numpy"] + (["numba"] if _kernels.NUMBA_ENABLED else [])
    rows = {}
    for backend in backends:
        if backend == "numba":
            _kernels.warmup()
            em_batch(drift, sigma, half, x0[:2], dw[:2], grid.dt, backend=backend)
        t_em, (em_vals, _) = timed(
            lambda: em_batch(drift, sigma, half, x0, dw, grid.dt, backend=backend),
            args.repeat)
        t_rk, (rk_vals, _) = timed(
            lambda: rk4_batch(drift, sigma, x0, vst, grid.dt, backend=backend),
            args.repeat)
        rows[backend] = (t_em, t_rk, em_vals, rk_vals)
        print(f"  {backend:>5}: euler {t_em * 1e3:8.1f} ms   rk4 {t_rk * 1e3:8.1f} ms")

    if len(rows) == 2:
        s_em = rows["numpy"][0] / rows["numba"][0]
        s_rk = rows["numpy"][1] / rows["numba"][1]
        dev_em = np.nanmax(np.abs(rows["numpy"][2] - rows["numba"][2]))
        dev_rk = np.nanmax(np.abs(rows["numpy"][3] - rows["numba"][3]))
        print(f"  speedup: euler x{s_em:.1f}, rk4 x{s_rk:.1f}; "
              f"max backend deviation: euler {dev_em:.2e}, rk4 {dev_rk:.2e}")


if __name__ == "__main__":
    main()
