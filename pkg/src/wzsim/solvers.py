"""Path solvers: corrected Euler SDE and the smoothed-noise random ODE.

Both solvers run on shared noise: the Euler route consumes the Brownian
increments on the reference grid, the Runge-Kutta route consumes the time
derivative of the smoothed path built from the same Brownian sample, with
steps aligned so every kink of the smoothed path is a step boundary.

Dispatch: d = 1 registry coefficients go through the compiled kernels in
``_kernels`` (unless disabled); everything else runs the vectorized numpy
route below.  Paths whose state leaves [-limit, limit] are aborted (tail
NaN) and reported through a status code, never silently dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .coeffs import CorrectionMatrix, DiffusionField, DriftField, correction_drift_batch
from .core import Path, RngStream, TimeGrid, ValidationError, make_grid, sample_brownian_batch, sup_distance_values
from .noise import ApproxPath, NoiseFamily

OVERFLOW_LIMIT = 1e12


class SolverAbort(RuntimeError):
    """A path left the admissible range; carries the first bad step index."""

    def __init__(self, step: int):
        super().__init__(f"path aborted at step {step}: non-finite or |x| > {OVERFLOW_LIMIT:g}")
        self.step = step


@dataclass(frozen=True)
class SolverConfig:
    """Grid resolution shared by coupled runs.

    ``n_ref`` reference-grid steps over the horizon; the random ODE takes at
    least ``m_ode`` sub-steps per noise block, refined so its grid contains
    every reference node.
    """

    n_ref: int
    m_ode: int = 16
    horizon: float = 1.0
    x0: float = 0.0

    def __post_init__(self):
        if self.n_ref < 1 or self.m_ode < 4:
            raise ValidationError("need n_ref >= 1 and m_ode >= 4")

    def grid(self) -> TimeGrid:
        return make_grid(self.horizon, self.n_ref)


def _kernelable(b: DriftField, sigma: DiffusionField, d: int, backend: str | None) -> bool:
    if backend == "numpy":
        return False
    if backend == "numba" and not _kernels.NUMBA_ENABLED:
        raise ValidationError("numba backend requested but unavailable/disabled")
    if backend is None and not _kernels.NUMBA_ENABLED:
        return False
    return d == 1 and b.kernel_id >= 0 and sigma.kernel_id >= 0


def _params(field) -> np.ndarray:
    return np.asarray(field.kernel_params, dtype=float) if field.kernel_params else np.zeros(1)


# ---------------------------------------------------------------------------
# Euler route for the corrected SDE
# ---------------------------------------------------------------------------


def em_batch(b: DriftField, sigma: DiffusionField, c: CorrectionMatrix,
             x0: np.ndarray, dw: np.ndarray, dt: float,
             backend: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Euler paths for dX = (b + correction) dt + sigma dW over a batch.

    x0: (m, d); dw: (m, steps, d).  Returns values (m, steps+1, d) and a
    per-path status (0 = ok, k = aborted entering step k).
    """
    m, steps, d = dw.shape
    if _kernelable(b, sigma, d, backend):
        out = np.empty((m, steps + 1))
        status = np.zeros(m, dtype=np.int64)
        _kernels.em_kernel(np.ascontiguousarray(x0[:, 0]), np.ascontiguousarray(dw[:, :, 0]),
                           dt, b.kernel_id, _params(b), sigma.kernel_id, _params(sigma),
                           float(c.matrix[0, 0]), OVERFLOW_LIMIT, out, status)
        return out[:, :, None], status
    return _em_numpy(b, sigma, c, x0, dw, dt)


def _em_numpy(b, sigma, c, x0, dw, dt):
    m, steps, d = dw.shape
    vals = np.empty((m, steps + 1, d))
    x = np.array(np.broadcast_to(x0, (m, d)), dtype=float)
    vals[:, 0] = x
    status = np.zeros(m, dtype=np.int64)
    with np.errstate(all="ignore"):
        for k in range(steps):
            drift = b(x) + correction_drift_batch(sigma, c, x)
            x = x + drift * dt + np.einsum("mij,mj->mi", sigma.sigma(x), dw[:, k])
            bad = ~np.isfinite(x).all(axis=1) | (np.abs(x).max(axis=1) > OVERFLOW_LIMIT)
            fresh = bad & (status == 0)
            status[fresh] = k + 1
            x[bad] = np.nan
            vals[:, k + 1] = x
    return vals, status


def solve_ito_corrected(b: DriftField, sigma: DiffusionField, c: CorrectionMatrix,
                        x0, w: Path, backend: str | None = None) -> Path:
    """Integrate one corrected-SDE path on the grid of the Brownian sample w."""
    x0v = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0v.shape[0] != w.dim:
        raise ValidationError("x0 dimension does not match the Brownian path")
    dw = np.diff(w.values, axis=0)[None]
    vals, status = em_batch(b, sigma, c, x0v[None], dw, w.grid.dt, backend=backend)
    if status[0] != 0:
        raise SolverAbort(int(status[0]))
    return Path(w.grid, vals[0])


# ---------------------------------------------------------------------------
# Runge-Kutta route for the random ODE
# ---------------------------------------------------------------------------


def _stage_derivs(family: NoiseFamily, wsub: np.ndarray, n: int, msub: int,
                  block_start: int, block_end: int, m_int: int) -> np.ndarray:
    """Driver derivative at RK4 stage positions, block-local at kinks.

    Returns (paths, steps, 3, d) for steps = (block_end - block_start) * m_int.
    """
    nb = block_end - block_start
    j = np.arange(nb * m_int)
    kblk = block_start + j // m_int
    frac = (j % m_int).astype(float)
    kb = np.repeat(kblk, 3)
    us = np.empty(3 * j.size)
    us[0::3] = frac / m_int
    us[1::3] = (frac + 0.5) / m_int
    us[2::3] = (frac + 1.0) / m_int
    der = family.batch_derivs_blockwise(wsub, n, msub, kb, us)
    return der.reshape(wsub.shape[0], nb * m_int, 3, wsub.shape[2])


def rk4_batch(b: DriftField, sigma: DiffusionField, x0: np.ndarray,
              vstages: np.ndarray, h: float, stride: int = 1,
              backend: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """RK4 paths for dx/ds = b(x) + sigma(x) v(s) with precomputed stage drivers.

    vstages: (m, steps, 3, d); records every ``stride`` steps.  Returns
    values (m, steps//stride + 1, d) and the abort status per path.
    """
    m, steps, _, d = vstages.shape
    if steps % stride:
        raise ValidationError("stride must divide the step count")
    if _kernelable(b, sigma, d, backend):
        out = np.empty((m, steps // stride + 1))
        status = np.zeros(m, dtype=np.int64)
        _kernels.rk4_kernel(np.ascontiguousarray(x0[:, 0]),
                            np.ascontiguousarray(vstages[:, :, :, 0]), h,
                            b.kernel_id, _params(b), sigma.kernel_id, _params(sigma),
                            OVERFLOW_LIMIT, stride, out, status)
        return out[:, :, None], status
    return _rk4_numpy(b, sigma, x0, vstages, h, stride)


def _rk4_numpy(b, sigma, x0, vstages, h, stride):
    m, steps, _, d = vstages.shape
    vals = np.empty((m, steps // stride + 1, d))
    x = np.array(np.broadcast_to(x0, (m, d)), dtype=float)
    vals[:, 0] = x
    status = np.zeros(m, dtype=np.int64)

    def rhs(y, v):
        return b(y) + np.einsum("mij,mj->mi", sigma.sigma(y), v)

    with np.errstate(all="ignore"):
        rec = 1
        for k in range(steps):
            v0, vm, v1 = vstages[:, k, 0], vstages[:, k, 1], vstages[:, k, 2]
            k1 = rhs(x, v0)
            k2 = rhs(x + 0.5 * h * k1, vm)
            k3 = rhs(x + 0.5 * h * k2, vm)
            k4 = rhs(x + h * k3, v1)
            x = x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
            bad = ~np.isfinite(x).all(axis=1) | (np.abs(x).max(axis=1) > OVERFLOW_LIMIT)
            fresh = bad & (status == 0)
            status[fresh] = k + 1
            x[bad] = np.nan
            if (k + 1) % stride == 0:
                vals[:, rec] = x
                rec += 1
    return vals, status


def solve_random_ode(b_n: DriftField, sigma: DiffusionField, wn: ApproxPath,
                     x0, m_ode: int = 16, block_start: int = 0,
                     block_end: int | None = None,
                     backend: str | None = None) -> Path:
    """Integrate dx/ds = b_n(x) + sigma(x) dW^n/ds over whole noise blocks.

    Returns the solution sampled on the ODE step grid (m_ode steps per
    block), with the grid's origin at the start of the window.
    """
    if m_ode < 4:
        raise ValidationError("m_ode must be >= 4")
    if not b_n.is_c1:
        # the random-ODE route is for the smoothed drift; singular fields
        # carry no C^1 metadata and do not belong here
        raise ValidationError(f"drift '{b_n.name}' carries no C^1 metadata")
    block_end = wn.blocks if block_end is None else block_end
    if not 0 <= block_start < block_end <= wn.blocks:
        raise ValidationError("bad block window")
    x0v = np.atleast_1d(np.asarray(x0, dtype=float))
    h = 1.0 / (wn.n * m_ode)
    vst = _stage_derivs(wn.family, wn.brownian.values[None], wn.n, wn.msub,
                        block_start, block_end, m_ode)
    vals, status = rk4_batch(b_n, sigma, x0v[None], vst, h, backend=backend)
    if status[0] != 0:
        raise SolverAbort(int(status[0]))
    grid = make_grid((block_end - block_start) / wn.n, (block_end - block_start) * m_ode)
    return Path(grid, vals[0])


# ---------------------------------------------------------------------------
# coupled runs on shared noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoupledRun:
    x: Path
    xn: Path
    sup_error: float


def _coupling_layout(config: SolverConfig, n: int) -> tuple[int, int, int]:
    """(blocks, msub_eff, m_int): subgrid cells per block and ODE refinement."""
    blocks = config.horizon * n
    if abs(blocks - round(blocks)) > 1e-9:
        raise ValidationError("horizon must hold a whole number of noise blocks")
    blocks = int(round(blocks))
    msub = config.n_ref / blocks
    if abs(msub - round(msub)) > 1e-9 or round(msub) < 1:
        raise ValidationError(f"n_ref={config.n_ref} is not a multiple of the block count {blocks}")
    msub = int(round(msub))
    m_int = msub * int(np.ceil(config.m_ode / msub))
    return blocks, msub, m_int


def coupled_batch(b: DriftField, b_n: DriftField, sigma: DiffusionField,
                  c: CorrectionMatrix, family: NoiseFamily, n: int, x0,
                  stream: RngStream, config: SolverConfig, count: int,
                  backend: str | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Co-simulate the corrected SDE and the random ODE on shared noise.

    Path i consumes stream.child(i).  Returns (sup_error, status_sde,
    status_ode); sup errors of aborted paths are NaN.
    """
    d = sigma.dim
    blocks, msub, m_int = _coupling_layout(config, n)
    grid = config.grid()
    x0v = np.broadcast_to(np.atleast_1d(np.asarray(x0, dtype=float)), (count, d))
    w = sample_brownian_batch(grid, d, stream, count)
    dw = np.diff(w, axis=1)
    xv, st_sde = em_batch(b, sigma, c, x0v, dw, grid.dt, backend=backend)
    vst = _stage_derivs(family, w, n, msub, 0, blocks, m_int)
    xnv, st_ode = rk4_batch(b_n, sigma, x0v, vst, 1.0 / (n * m_int),
                            stride=m_int // msub, backend=backend)
    diff = xv - xnv
    with np.errstate(invalid="ignore"):
        sup = np.sqrt((diff * diff).sum(axis=2)).max(axis=1)
    return sup, st_sde, st_ode


def coupled_run(b: DriftField, b_n: DriftField, sigma: DiffusionField,
                c: CorrectionMatrix, family: NoiseFamily, n: int, x0,
                stream: RngStream, config: SolverConfig,
                backend: str | None = None) -> CoupledRun:
    """One shared-noise draw: corrected SDE vs random ODE, plus their sup distance."""
    d = sigma.dim
    blocks, msub, m_int = _coupling_layout(config, n)
    grid = config.grid()
    x0v = np.broadcast_to(np.atleast_1d(np.asarray(x0, dtype=float)), (1, d))
    w = sample_brownian_batch(grid, d, stream, 1)
    dw = np.diff(w, axis=1)
    xv, st_sde = em_batch(b, sigma, c, x0v, dw, grid.dt, backend=backend)
    if st_sde[0] != 0:
        raise SolverAbort(int(st_sde[0]))
    vst = _stage_derivs(family, w, n, msub, 0, blocks, m_int)
    xnv, st_ode = rk4_batch(b_n, sigma, x0v, vst, 1.0 / (n * m_int),
                            stride=m_int // msub, backend=backend)
    if st_ode[0] != 0:
        raise SolverAbort(int(st_ode[0]))
    x_path = Path(grid, xv[0])
    xn_path = Path(grid, xnv[0])
    return CoupledRun(x_path, xn_path, sup_distance_values(xv[0], xnv[0]))
