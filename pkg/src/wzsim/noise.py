"""Smoothed approximations of the Wiener process and their area coefficients.

Three families are built from a Brownian path sampled on a uniform subgrid
with ``msub`` cells per noise block of width 1/n:

* ``PiecewiseShape`` -- blockwise interpolation of the increments with a
  C^1 shape function f (f(u)=u gives the familiar polygonal path),
* ``Mollified`` -- one-sided convolution with rho_n(s) = n rho(n s),
* ``McShane`` -- d=2 blockwise interpolation where the two components swap
  shape functions whenever the block increments have opposite signs.

The module also estimates the coefficients that decide the limit equation:
the Levy area functional S_ij(t), the smoothed-path area density
s_ij(1/n, n), and the drift-correction density c_ij(t, n).  Estimators are
plain Monte Carlo with per-sample counter-based streams; time integrals use
composite per-cell Gauss-Legendre so that piecewise-smooth integrands are
resolved exactly between kinks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Path, RngStream, TimeGrid, ValidationError, make_grid, sample_brownian_batch
from .shapes import MollifierKernel, ShapeFunction, _gl_composite


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------


class NoiseFamily:
    """Interface: vectorized evaluation of W^n and its time derivative.

    ``wsub`` always has shape (npaths, nsub+1, d) with nsub = blocks*msub
    samples of W on the uniform subgrid of spacing 1/(n*msub); ``times`` are
    absolute times in [0, blocks/n].
    """

    name = "family"
    required_dim: int | None = None

    def batch_values(self, wsub: np.ndarray, n: int, msub: int, times: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def batch_derivs(self, wsub: np.ndarray, n: int, msub: int, times: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def batch_derivs_blockwise(self, wsub: np.ndarray, n: int, msub: int,
                               kblk: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Derivatives at block-local positions (block kblk, offset u in [0, 1]).

        Same as ``batch_derivs`` at times (kblk + u)/n except that u = 1 is
        attributed to block kblk (the left limit at a kink), which is what
        an integrator stepping up to a kink needs.
        """
        return self.batch_derivs(wsub, n, msub, (np.asarray(kblk) + np.asarray(u)) / n)

    def kink_times(self, n: int, blocks: int) -> np.ndarray:
        """Times where d/ds W^n may jump; empty for smooth families."""
        return np.arange(1, blocks) / n


def _block_position(times: np.ndarray, n: int, blocks: int):
    tn = np.asarray(times, dtype=float) * n
    k = np.clip(np.floor(tn).astype(np.int64), 0, blocks - 1)
    u = tn - k
    return k, u


@dataclass(frozen=True)
class PiecewiseShape(NoiseFamily):
    """W^n_t = W_{k/n} + f(n(t - k/n)) (W_{(k+1)/n} - W_{k/n}) on each block."""

    shape: ShapeFunction

    @property
    def name(self):
        return f"piecewise[{self.shape.name}]"

    def batch_values(self, wsub, n, msub, times):
        blocks = (wsub.shape[1] - 1) // msub
        k, u = _block_position(times, n, blocks)
        w0 = wsub[:, k * msub, :]
        dw = wsub[:, (k + 1) * msub, :] - w0
        return w0 + self.shape.value(u)[None, :, None] * dw

    def batch_derivs(self, wsub, n, msub, times):
        blocks = (wsub.shape[1] - 1) // msub
        k, u = _block_position(times, n, blocks)
        dw = wsub[:, (k + 1) * msub, :] - wsub[:, k * msub, :]
        return n * self.shape.deriv(u)[None, :, None] * dw

    def batch_derivs_blockwise(self, wsub, n, msub, kblk, u):
        k = np.asarray(kblk, dtype=np.int64)
        u = np.asarray(u, dtype=float)
        dw = wsub[:, (k + 1) * msub, :] - wsub[:, k * msub, :]
        return n * self.shape.deriv(u)[None, :, None] * dw


@dataclass(frozen=True)
class McShane(NoiseFamily):
    """Two-dimensional blockwise construction with sign-dependent shape swap.

    On blocks where the product of the two component increments is
    nonnegative, component i is interpolated with f_i; otherwise the shapes
    are swapped.
    """

    f1: ShapeFunction
    f2: ShapeFunction

    required_dim = 2

    @property
    def name(self):
        return f"mcshane[{self.f1.name},{self.f2.name}]"

    def _selectors(self, wsub, msub):
        # swap[p, k] is True on blocks with strictly negative increment product
        blockvals = wsub[:, ::msub, :]
        dwb = np.diff(blockvals, axis=1)
        return (dwb[:, :, 0] * dwb[:, :, 1]) < 0.0

    def batch_values(self, wsub, n, msub, times):
        if wsub.shape[2] != 2:
            raise ValidationError("McShane family requires dimension 2")
        blocks = (wsub.shape[1] - 1) // msub
        k, u = _block_position(times, n, blocks)
        w0 = wsub[:, k * msub, :]
        dw = wsub[:, (k + 1) * msub, :] - w0
        swap = self._selectors(wsub, msub)[:, k]
        fa = self.f1.value(u)[None, :]
        fb = self.f2.value(u)[None, :]
        out = np.empty_like(w0)
        out[:, :, 0] = w0[:, :, 0] + np.where(swap, fb, fa) * dw[:, :, 0]
        out[:, :, 1] = w0[:, :, 1] + np.where(swap, fa, fb) * dw[:, :, 1]
        return out

    def batch_derivs(self, wsub, n, msub, times):
        blocks = (wsub.shape[1] - 1) // msub
        k, _ = _block_position(times, n, blocks)
        u = np.asarray(times, dtype=float) * n - k
        return self.batch_derivs_blockwise(wsub, n, msub, k, u)

    def batch_derivs_blockwise(self, wsub, n, msub, kblk, u):
        if wsub.shape[2] != 2:
            raise ValidationError("McShane family requires dimension 2")
        k = np.asarray(kblk, dtype=np.int64)
        u = np.asarray(u, dtype=float)
        dw = wsub[:, (k + 1) * msub, :] - wsub[:, k * msub, :]
        swap = self._selectors(wsub, msub)[:, k]
        da = self.f1.deriv(u)[None, :]
        db = self.f2.deriv(u)[None, :]
        out = np.empty_like(dw)
        out[:, :, 0] = n * np.where(swap, db, da) * dw[:, :, 0]
        out[:, :, 1] = n * np.where(swap, da, db) * dw[:, :, 1]
        return out


@dataclass(frozen=True)
class Mollified(NoiseFamily):
    """W^n_s = integral over r >= 0 of W_r rho_n(s - r) dr, rho_n(s) = n rho(n s).

    The convolution window [s - 1/n, s] is clipped at 0, matching the
    one-sided integral; W is extended by zero below 0 (continuous, since
    W_0 = 0).  The quadrature splits every cell at the sampled path's kink
    positions, so value and derivative are exact integrals of the linearly
    interpolated path and the derivative evaluator (which integrates
    rho_n' instead, the boundary terms vanishing because rho(0)=rho(1)=0)
    agrees with the finite-difference derivative to machine precision.
    """

    kernel: MollifierKernel
    order: int = 6

    @property
    def name(self):
        return f"mollified[{self.kernel.name}]"

    def kink_times(self, n, blocks):
        return np.empty(0)

    def _convolve(self, wsub, n, msub, times, kernel_fn, scale):
        npaths, _, d = wsub.shape
        nsub = wsub.shape[1] - 1
        times = np.asarray(times, dtype=float)
        nt = times.shape[0]
        h = 1.0 / (n * msub)

        # Split each of the msub tau-cells at the path-kink offset phi = t mod h,
        # then apply Gauss-Legendre on both sub-cells; integrands are smooth there.
        x, wq = np.polynomial.legendre.leggauss(self.order)
        x = (x + 1.0) / 2.0
        wq = wq / 2.0

        phi = np.mod(times, h)                       # (nt,)
        base = np.arange(msub) * h                   # (msub,)
        # sub-cell A: [c h, c h + phi], sub-cell B: [c h + phi, (c+1) h]
        tau_a = base[None, :, None] + phi[:, None, None] * x[None, None, :]
        tau_b = base[None, :, None] + phi[:, None, None] + (h - phi)[:, None, None] * x[None, None, :]
        w_a = np.broadcast_to((phi[:, None] * wq[None, :])[:, None, :], tau_a.shape)
        w_b = np.broadcast_to(((h - phi)[:, None] * wq[None, :])[:, None, :], tau_b.shape)

        tau = np.concatenate([tau_a, tau_b], axis=2).reshape(nt, -1)   # (nt, Q)
        wts = np.concatenate([w_a, w_b], axis=2).reshape(nt, -1)
        dens = kernel_fn(tau * n) * scale
        wts = wts * dens

        pos = times[:, None] - tau                   # (nt, Q) sample positions
        idx = pos * (n * msub)
        j = np.floor(idx).astype(np.int64)
        theta = idx - j
        valid = idx >= 0.0
        j = np.clip(j, 0, nsub - 1)

        out = np.zeros((npaths, nt, d))
        for q in range(tau.shape[1]):
            jq = j[:, q]
            lin = (1.0 - theta[:, q])[None, :, None] * wsub[:, jq, :] \
                + theta[:, q][None, :, None] * wsub[:, jq + 1, :]
            out += (wts[:, q] * valid[:, q])[None, :, None] * lin
        return out

    def batch_values(self, wsub, n, msub, times):
        return self._convolve(wsub, n, msub, times, self.kernel.value, float(n))

    def batch_derivs(self, wsub, n, msub, times):
        return self._convolve(wsub, n, msub, times, self.kernel.deriv, float(n) * n)


# ---------------------------------------------------------------------------
# approximation paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ApproxPath:
    """A smoothed path W^n built from one Brownian path.

    Continuous on [0, T], piecewise C^1 between the kink times k/n (no
    kinks at all for the mollified family).  ``msub`` is the number of
    subgrid cells per block carried by the underlying Brownian sample.
    """

    family: NoiseFamily
    brownian: Path
    n: int
    msub: int
    blocks: int

    @property
    def dim(self) -> int:
        return self.brownian.dim

    def kinks(self) -> np.ndarray:
        return self.family.kink_times(self.n, self.blocks)

    def values_at(self, times) -> np.ndarray:
        t = np.atleast_1d(np.asarray(times, dtype=float))
        return self.family.batch_values(self.brownian.values[None], self.n, self.msub, t)[0]

    def derivs_at(self, times) -> np.ndarray:
        t = np.atleast_1d(np.asarray(times, dtype=float))
        return self.family.batch_derivs(self.brownian.values[None], self.n, self.msub, t)[0]

    def value(self, t: float) -> np.ndarray:
        return self.values_at([t])[0]

    def deriv(self, t: float) -> np.ndarray:
        return self.derivs_at([t])[0]


def build_approximation(family: NoiseFamily, w: Path, n: int) -> ApproxPath:
    """Wrap a Brownian path in its smoothed approximation at level n.

    The Brownian grid spacing must divide the block width 1/n so block
    endpoints are grid nodes, and the horizon must hold a whole number of
    blocks.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if family.required_dim is not None and w.dim != family.required_dim:
        raise ValidationError(
            f"family {family.name} requires dimension {family.required_dim}, got {w.dim}"
        )
    dt = w.grid.dt
    msub = 1.0 / (n * dt)
    if abs(msub - round(msub)) > 1e-9 or round(msub) < 1:
        raise ValidationError(
            f"grid spacing {dt} does not divide the block width 1/{n}"
        )
    msub = int(round(msub))
    blocks = w.grid.steps / msub
    if abs(blocks - round(blocks)) > 1e-9:
        raise ValidationError("horizon does not hold a whole number of noise blocks")
    return ApproxPath(family, w, n, msub, int(round(blocks)))


# ---------------------------------------------------------------------------
# quadrature helpers
# ---------------------------------------------------------------------------


def _cell_quadrature(blocks: int, n: int, msub: int, order: int):
    """Per-cell GL nodes/weights over [0, blocks/n] with msub cells per block."""
    rel, wrel = _gl_composite(cells=blocks * msub, order=order)
    width = blocks / n
    return rel * width, wrel * width


# ---------------------------------------------------------------------------
# Levy area of the raw Brownian path
# ---------------------------------------------------------------------------


def levy_area(w: Path, t: float) -> np.ndarray:
    """Antisymmetric area matrix S_ij(t) of the Brownian path, by midpoint sums.

    S_ij(t) = (int_0^t W^i o dW^j - W^j o dW^i) / (2t) with the Stratonovich
    (midpoint) discretization on the path's grid; S(0) = 0 by convention.
    """
    if t == 0.0:
        return np.zeros((w.dim, w.dim))
    k = w.grid.node_index(t)
    if k == 0:
        return np.zeros((w.dim, w.dim))
    v = w.values
    mid = 0.5 * (v[:k] + v[1 : k + 1])
    dw = v[1 : k + 1] - v[:k]
    a = mid.T @ dw
    return (a - a.T) / (2.0 * t)


# ---------------------------------------------------------------------------
# coefficient estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientEstimate:
    value: float
    standard_error: float
    sample_count: int


@dataclass(frozen=True)
class CoefficientMatrix:
    """d x d matrix of Monte Carlo coefficient estimates."""

    values: np.ndarray
    stderrs: np.ndarray
    sample_count: int

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def at(self, i: int, j: int) -> CoefficientEstimate:
        return CoefficientEstimate(float(self.values[i, j]), float(self.stderrs[i, j]), self.sample_count)


def _subgrid(blocks: int, n: int, msub: int) -> TimeGrid:
    return make_grid(blocks / n, blocks * msub)


def single_path_s_matrix(family: NoiseFamily, w: Path, n: int,
                         order: int = 4) -> np.ndarray:
    """Area density over the first block of one path: the s_ij(1/n, n) integrand.

    Returns the d x d matrix (int_0^{1/n} W^{n,i} dW^{n,j}/ds - sym) / (2/n)
    for the given Brownian sample (no expectation taken); the sub-block
    quadrature resolution comes from the path's own grid.
    """
    ap = build_approximation(family, w, n)
    times, wts = _cell_quadrature(1, n, ap.msub, order)
    vals = ap.values_at(times)
    ders = ap.derivs_at(times)
    a = (wts[:, None] * vals).T @ ders
    return (a - a.T) / (2.0 / n)


def single_path_c_matrix(family: NoiseFamily, w: Path, n: int, t: float,
                         order: int = 4) -> np.ndarray:
    """Correction density of one path: int_0^t dW^{n,i}/ds (W^{n,j}_t - W^{n,j}_s) ds / t."""
    blocks = t * n
    if abs(blocks - round(blocks)) > 1e-9 or round(blocks) < 1:
        raise ValidationError("t must be a positive multiple of 1/n")
    blocks = int(round(blocks))
    ap = build_approximation(family, w, n)
    times, wts = _cell_quadrature(blocks, n, ap.msub, order)
    vals = ap.values_at(times)
    ders = ap.derivs_at(times)
    vt = ap.values_at([t])[0]
    c = (wts[:, None] * ders).T @ (vt[None, :] - vals)
    return c / t


def single_path_def31_moments(family: NoiseFamily, w: Path, n: int,
                              order: int = 4) -> tuple[float, float]:
    """(|W^n_{1/n}|^6, (int_0^{1/n} |dW^n/ds| ds)^6) for one Brownian sample."""
    ap = build_approximation(family, w, n)
    end = ap.values_at([1.0 / n])[0]
    m_end = float((end @ end) ** 3)
    times, wts = _cell_quadrature(1, n, ap.msub, order)
    speed = np.sqrt((ap.derivs_at(times) ** 2).sum(axis=1))
    m_int = float(np.dot(wts, speed) ** 6)
    return m_end, m_int


def _batched_brownian(blocks: int, n: int, msub: int, d: int, stream: RngStream,
                      count: int, start: int) -> np.ndarray:
    grid = _subgrid(blocks, n, msub)
    return sample_brownian_batch(grid, d, stream.child(start), count)


def estimate_s(family: NoiseFamily, n: int, samples: int, stream: RngStream,
               d: int = 2, msub: int = 8, order: int = 4,
               blocks_per_path: int = 8, batch: int = 512) -> CoefficientMatrix:
    """Monte Carlo estimate of the area density s_ij(1/n, n).

    ``samples`` independent paths each contribute ``blocks_per_path`` block
    functionals; block slices rebased at their left endpoint are fresh
    copies of the first-block functional (the shift property of the
    construction), and disjoint blocks use disjoint increments, so all
    sample_count = samples * blocks_per_path values are i.i.d.
    """
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    if family.required_dim is not None:
        d = family.required_dim
    times, wts = _cell_quadrature(1, n, msub, order)
    tot = np.zeros((d, d))
    tot2 = np.zeros((d, d))
    count = 0
    for start in range(0, samples, batch):
        m = min(batch, samples - start)
        wsub = _batched_brownian(blocks_per_path, n, msub, d, stream, m, start)
        for k in range(blocks_per_path):
            sl = wsub[:, k * msub : (k + 1) * msub + 1, :]
            sl = sl - sl[:, :1, :]
            vals = family.batch_values(sl, n, msub, times)
            ders = family.batch_derivs(sl, n, msub, times)
            a = np.einsum("pti,ptj->pij", wts[None, :, None] * vals, ders)
            s = (a - np.swapaxes(a, 1, 2)) / (2.0 / n)
            tot += s.sum(axis=0)
            tot2 += (s * s).sum(axis=0)
            count += m
    mean = tot / count
    var = np.maximum(tot2 / count - mean * mean, 0.0)
    return CoefficientMatrix(mean, np.sqrt(var / count), count)


def estimate_c(family: NoiseFamily, n: int, t: float, samples: int, stream: RngStream,
               d: int = 2, msub: int = 8, order: int = 4, batch: int = 256) -> CoefficientMatrix:
    """Monte Carlo estimate of the correction density c_ij(t, n), t a multiple of 1/n."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    blocks = t * n
    if abs(blocks - round(blocks)) > 1e-9 or round(blocks) < 1:
        raise ValidationError("t must be a positive multiple of 1/n")
    blocks = int(round(blocks))
    if family.required_dim is not None:
        d = family.required_dim
    times, wts = _cell_quadrature(blocks, n, msub, order)
    tot = np.zeros((d, d))
    tot2 = np.zeros((d, d))
    for start in range(0, samples, batch):
        m = min(batch, samples - start)
        wsub = _batched_brownian(blocks, n, msub, d, stream, m, start)
        vals = family.batch_values(wsub, n, msub, times)
        ders = family.batch_derivs(wsub, n, msub, times)
        vt = family.batch_values(wsub, n, msub, np.array([t]))
        c = np.einsum("pti,ptj->pij", wts[None, :, None] * ders, vt - vals) / t
        tot += c.sum(axis=0)
        tot2 += (c * c).sum(axis=0)
    mean = tot / samples
    var = np.maximum(tot2 / samples - mean * mean, 0.0)
    return CoefficientMatrix(mean, np.sqrt(var / samples), samples)


# ---------------------------------------------------------------------------
# moment condition of the approximation class
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentCheckReport:
    """Sixth-moment scaling of W^n over its first block, across levels n.

    Both E|W^n_{1/n}|^6 and E(int_0^{1/n} |dW^n/ds| ds)^6 must decay like
    C/n^3; the report carries the Monte Carlo estimates and the fitted
    log-log exponents.
    """

    family_name: str
    n_list: tuple[int, ...]
    endpoint_moment: np.ndarray
    endpoint_stderr: np.ndarray
    speed_moment: np.ndarray
    speed_stderr: np.ndarray
    endpoint_exponent: float
    speed_exponent: float
    sample_count: int


def check_moment_condition(family: NoiseFamily, n_list: Sequence[int], samples: int,
                       stream: RngStream, d: int = 1, msub: int = 8, order: int = 4,
                       batch: int = 2048) -> MomentCheckReport:
    """Estimate the two sixth moments over a range of n and fit their n-exponents."""
    if samples < 100:
        raise ValidationError("need at least 100 samples")
    if family.required_dim is not None:
        d = family.required_dim
    n_list = tuple(int(n) for n in n_list)
    times_rel, wts_rel = _gl_composite(cells=msub, order=order)
    m_end = np.zeros(len(n_list))
    se_end = np.zeros(len(n_list))
    m_int = np.zeros(len(n_list))
    se_int = np.zeros(len(n_list))
    for idx, n in enumerate(n_list):
        times = times_rel / n
        wts = wts_rel / n
        tot = np.zeros(2)
        tot2 = np.zeros(2)
        for start in range(0, samples, batch):
            m = min(batch, samples - start)
            wsub = _batched_brownian(1, n, msub, d, stream.child(idx * samples), m, start)
            end = family.batch_values(wsub, n, msub, np.array([1.0 / n]))[:, 0, :]
            a = ((end * end).sum(axis=1)) ** 3
            speed = np.sqrt((family.batch_derivs(wsub, n, msub, times) ** 2).sum(axis=2))
            b = (speed @ wts) ** 6
            tot += [a.sum(), b.sum()]
            tot2 += [(a * a).sum(), (b * b).sum()]
        mean = tot / samples
        var = np.maximum(tot2 / samples - mean * mean, 0.0)
        m_end[idx], m_int[idx] = mean
        se_end[idx], se_int[idx] = np.sqrt(var / samples)
    ln = np.log(np.asarray(n_list, dtype=float))
    exp_end = float(np.polyfit(ln, np.log(m_end), 1)[0])
    exp_int = float(np.polyfit(ln, np.log(m_int), 1)[0])
    return MomentCheckReport(family.name, n_list, m_end, se_end, m_int, se_int,
                             exp_end, exp_int, samples)
