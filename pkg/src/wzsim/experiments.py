"""Monte Carlo harnesses: convergence rates, stability, tubes, Girsanov weights.

Every estimator runs paths in batches with per-path counter-based streams
(path i of a call uses ``stream.child(i)``), accumulates per-path values
into arrays indexed by path, and reduces them in fixed order -- so results
are byte-stable under any worker or batch configuration.  Solver aborts are
counted and reported; a run whose abort fraction exceeds ``ABORT_TOLERANCE``
raises instead of returning a biased estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .coeffs import (
    CorrectionMatrix,
    DiffusionField,
    DriftApproxSequence,
    DriftField,
    lp_distance,
)
from .core import Path, RngStream, TimeGrid, ValidationError, sample_brownian_batch
from .noise import NoiseFamily
from .registry import zero_drift
from .solvers import SolverConfig, coupled_batch, em_batch

ABORT_TOLERANCE = 0.01


class AbortRateError(RuntimeError):
    """Raised when more than ABORT_TOLERANCE of the paths blew up."""

    def __init__(self, aborted: int, paths: int):
        super().__init__(f"{aborted}/{paths} paths aborted (> {ABORT_TOLERANCE:.0%})")
        self.aborted = aborted
        self.paths = paths


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return m, se


# ---------------------------------------------------------------------------
# Wong-Zakai mean-square error and rate fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WongZakaiSetup:
    """Coefficients of one coupled simulation family.

    ``drift_seq`` supplies the smoothed drift b_n fed to the random ODE;
    when absent the drift itself is used on both routes (smooth case).
    """

    drift: DriftField
    sigma: DiffusionField
    correction: CorrectionMatrix
    family: NoiseFamily
    x0: float
    config: SolverConfig
    drift_seq: DriftApproxSequence | None = None

    def smoothed_drift(self, n: int) -> DriftField:
        if self.drift_seq is None:
            return self.drift
        return self.drift_seq.generator(n)


@dataclass(frozen=True)
class MeanSupError:
    estimate: float
    stderr: float
    paths: int
    aborted: int


def mc_mean_sup_error(setup: WongZakaiSetup, n: int, paths: int, stream: RngStream,
                      batch: int = 256, backend: str | None = None) -> MeanSupError:
    """Mean and standard error of sup_t |X_t - X^n_t|^2 over coupled draws."""
    if paths < 30:
        raise ValidationError("need at least 30 paths")
    b_n = setup.smoothed_drift(n)
    sups = np.empty(paths)
    aborted = 0
    for start in range(0, paths, batch):
        m = min(batch, paths - start)
        sup, st_sde, st_ode = coupled_batch(
            setup.drift, b_n, setup.sigma, setup.correction, setup.family, n,
            setup.x0, stream.child(start), setup.config, m, backend=backend)
        bad = (st_sde != 0) | (st_ode != 0)
        aborted += int(bad.sum())
        sup = np.where(bad, np.nan, sup)
        sups[start : start + m] = sup
    if aborted > ABORT_TOLERANCE * paths:
        raise AbortRateError(aborted, paths)
    good = sups[np.isfinite(sups)]
    est, se = _mean_se(good**2)
    return MeanSupError(est, se, paths, aborted)


@dataclass(frozen=True)
class RateReport:
    """MSE against n with a fitted log-log slope and its confidence half-width."""

    points: tuple[tuple[int, float, float], ...]
    paths: int
    slope: float
    slope_half_width: float


def fit_rate(points: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Least-squares slope of log(mse) against log(n), with 95% half-width."""
    if len(points) < 3:
        raise ValidationError("need at least 3 points to fit a rate")
    ns = np.array([p[0] for p in points], dtype=float)
    ms = np.array([p[1] for p in points], dtype=float)
    if len(np.unique(ns)) != len(ns):
        raise ValidationError("n values must be distinct")
    if np.any(ms <= 0.0):
        raise ValidationError("mse values must be positive")
    x = np.log(ns)
    y = np.log(ms)
    coef, res = np.polyfit(x, y, 1, full=True)[:2]
    slope = float(coef[0])
    if len(points) == 2:
        return slope, float("inf")
    dof = len(points) - 2
    sxx = float(np.sum((x - x.mean()) ** 2))
    sigma2 = float(res[0]) / dof if len(res) else 0.0
    half = float(stats.t.ppf(0.975, dof)) * math.sqrt(sigma2 / sxx)
    return slope, half


def rate_sweep(setup: WongZakaiSetup, n_list: Sequence[int], paths: int,
               stream: RngStream, backend: str | None = None) -> RateReport:
    """mc_mean_sup_error across levels plus the fitted slope."""
    pts = []
    for i, n in enumerate(sorted(int(v) for v in n_list)):
        r = mc_mean_sup_error(setup, n, paths, stream.child(i * paths), backend=backend)
        pts.append((n, r.estimate, r.stderr))
    slope, half = fit_rate([(n, m) for n, m, _ in pts])
    return RateReport(tuple(pts), paths, slope, half)


# ---------------------------------------------------------------------------
# stability of the singular SDE in its drift
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityReport:
    """Per level: (n, L^p drift distance, mse, stderr); plus the fitted constant.

    ``fitted_constant`` is the least-squares coefficient of mse on the
    squared drift distance (through the origin); ``max_ratio`` the largest
    observed mse / distance^2.
    """

    levels: tuple[tuple[int, float, float, float], ...]
    paths: int
    fitted_constant: float
    max_ratio: float


def stability_sweep(b: DriftField, seq: DriftApproxSequence, sigma: DiffusionField,
                    c: CorrectionMatrix, x0, n_levels: Sequence[int], paths: int,
                    stream: RngStream, config: SolverConfig, batch: int = 256,
                    backend: str | None = None) -> StabilityReport:
    """Co-simulate the b-driven and b_n-driven corrected SDEs on shared noise.

    Both solutions start at the same x0 and consume identical increments,
    so the reported mse isolates the drift-difference term of the stability
    bound.
    """
    grid = config.grid()
    d = sigma.dim
    levels = []
    for li, n in enumerate(sorted(int(v) for v in n_levels)):
        b_n = seq.generator(n)
        dist = lp_distance(b, b_n, seq.p)
        sups = np.empty(paths)
        aborted = 0
        base = stream.child(li * paths)
        for start in range(0, paths, batch):
            m = min(batch, paths - start)
            w = sample_brownian_batch(grid, d, base.child(start), m)
            dw = np.diff(w, axis=1)
            x0v = np.broadcast_to(np.atleast_1d(np.asarray(x0, dtype=float)), (m, d))
            xv, st1 = em_batch(b, sigma, c, x0v, dw, grid.dt, backend=backend)
            yv, st2 = em_batch(b_n, sigma, c, x0v, dw, grid.dt, backend=backend)
            bad = (st1 != 0) | (st2 != 0)
            aborted += int(bad.sum())
            diff = xv - yv
            with np.errstate(invalid="ignore"):
                s = np.sqrt((diff * diff).sum(axis=2)).max(axis=1)
            sups[start : start + m] = np.where(bad, np.nan, s)
        if aborted > ABORT_TOLERANCE * paths:
            raise AbortRateError(aborted, paths)
        good = sups[np.isfinite(sups)]
        mse, se = _mean_se(good**2)
        levels.append((n, dist, mse, se))
    d2 = np.array([lv[1] ** 2 for lv in levels])
    ms = np.array([lv[2] for lv in levels])
    denom = float(np.sum(d2 * d2))
    fitted = float(np.sum(ms * d2) / denom) if denom > 0 else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(d2 > 0, ms / d2, 0.0)
    return StabilityReport(tuple(levels), paths, fitted, float(ratios.max()))


# ---------------------------------------------------------------------------
# tube probabilities (support of the law)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TubeReport:
    """Hit statistics for the sup-distance tube of radius epsilon around a target."""

    target: Path
    epsilon: float
    paths: int
    hits: int
    lower_confidence: float


def _binomial_lcb(hits: int, paths: int, level: float = 0.95) -> float:
    """Exact (Clopper-Pearson style) one-sided lower bound on the hit probability."""
    if hits <= 0:
        return 0.0
    return float(stats.beta.ppf(1.0 - level, hits, paths - hits + 1))


def _tube_sups(b: DriftField, sigma: DiffusionField, c: CorrectionMatrix, x0,
               target: Path, paths: int, stream: RngStream, batch: int,
               backend: str | None) -> np.ndarray:
    grid = target.grid
    d = target.dim
    x0v = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0v.shape[0] != d:
        raise ValidationError("x0 dimension does not match the target path")
    if np.max(np.abs(target.values[0] - x0v)) > 1e-12:
        raise ValidationError("target path must start at x0")
    sups = np.empty(paths)
    aborted = 0
    tv = target.values[None]
    for start in range(0, paths, batch):
        m = min(batch, paths - start)
        w = sample_brownian_batch(grid, d, stream.child(start), m)
        dw = np.diff(w, axis=1)
        xv, st = em_batch(b, sigma, c, np.broadcast_to(x0v, (m, d)), dw, grid.dt,
                          backend=backend)
        aborted += int((st != 0).sum())
        diff = xv - tv
        with np.errstate(invalid="ignore"):
            s = np.sqrt((diff * diff).sum(axis=2)).max(axis=1)
        sups[start : start + m] = np.where(st != 0, np.inf, s)
    if aborted > ABORT_TOLERANCE * paths:
        raise AbortRateError(aborted, paths)
    return sups


def tube_probability(b: DriftField, sigma: DiffusionField, c: CorrectionMatrix, x0,
                     target: Path, epsilon: float, paths: int, stream: RngStream,
                     batch: int = 1024, backend: str | None = None) -> TubeReport:
    """Fraction of corrected-SDE paths staying sup-within epsilon of the target."""
    if epsilon <= 0.0:
        raise ValidationError("epsilon must be positive")
    sups = _tube_sups(b, sigma, c, x0, target, paths, stream, batch, backend)
    hits = int((sups < epsilon).sum())
    return TubeReport(target, epsilon, paths, hits, _binomial_lcb(hits, paths))


def tube_ladder(b: DriftField, sigma: DiffusionField, c: CorrectionMatrix, x0,
                target: Path, eps_list: Sequence[float], paths: int,
                stream: RngStream, batch: int = 1024,
                backend: str | None = None) -> list[TubeReport]:
    """Tube reports for several radii evaluated on one shared path sample."""
    sups = _tube_sups(b, sigma, c, x0, target, paths, stream, batch, backend)
    out = []
    for eps in eps_list:
        if eps <= 0.0:
            raise ValidationError("epsilon must be positive")
        hits = int((sups < eps).sum())
        out.append(TubeReport(target, eps, paths, hits, _binomial_lcb(hits, paths)))
    return out


# ---------------------------------------------------------------------------
# Girsanov weights
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GirsanovReport:
    mean_rho: float
    stderr: float
    max_weight: float
    paths: int


def _driftless_weights(b: DriftField, sigma: DiffusionField, x0, grid: TimeGrid,
                       stream: RngStream, count: int,
                       backend: str | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Simulate Y (driftless Stratonovich reference, Ito form) and its weights.

    Y solves dY = correction(sigma, I/2) dt + sigma(Y) dW; the weight is the
    left-point discretization of exp(int b* sigma^-1 dW - 1/2 int b*(sigma
    sigma*)^-1 b ds) along Y.  Only diagonal sigma is supported (all
    registry diffusions are diagonal), which keeps the inverse pointwise.
    """
    d = sigma.dim
    half = CorrectionMatrix.half_identity(d)
    x0v = np.broadcast_to(np.atleast_1d(np.asarray(x0, dtype=float)), (count, d))
    w = sample_brownian_batch(grid, d, stream, count)
    dw = np.diff(w, axis=1)
    yv, st = em_batch(zero_drift(d), sigma, half, x0v, dw, grid.dt, backend=backend)
    y = yv[:, :-1, :]
    m, steps, _ = y.shape
    # structural check once: every registry diffusion is diagonal, which keeps
    # the pointwise inverse trivial
    probe = sigma.sigma(stream.generator().standard_normal((16, d)))
    if not np.allclose(probe, probe * np.eye(d), atol=1e-12):
        raise ValidationError("girsanov weights support diagonal diffusion fields only")
    flat = y.reshape(-1, d)
    diag = np.einsum("mkii->mki", sigma.sigma(flat).reshape(m, steps, d, d))
    if np.any(np.abs(diag) < 1e-12):
        raise ValidationError("sigma is singular along a simulated path")
    theta = b(flat).reshape(m, steps, d) / diag
    log_rho = np.einsum("mki,mki->m", theta, dw) - 0.5 * grid.dt * np.einsum("mki,mki->m", theta, theta)
    return np.exp(log_rho), yv, st


def girsanov_weight(b: DriftField, sigma: DiffusionField, x0, stream: RngStream,
                    grid: TimeGrid, backend: str | None = None) -> tuple[float, Path]:
    """One Girsanov weight rho_T and the driftless reference path it rode on."""
    rho, yv, st = _driftless_weights(b, sigma, x0, grid, stream, 1, backend)
    if st[0] != 0:
        raise AbortRateError(1, 1)
    return float(rho[0]), Path(grid, yv[0])


def girsanov_mean(b: DriftField, sigma: DiffusionField, x0, paths: int,
                  stream: RngStream, grid: TimeGrid, batch: int = 1024,
                  backend: str | None = None) -> GirsanovReport:
    """Sample mean of rho_T; equals 1 for admissible drifts (mean-one check)."""
    rhos = np.empty(paths)
    aborted = 0
    for start in range(0, paths, batch):
        m = min(batch, paths - start)
        rho, _, st = _driftless_weights(b, sigma, x0, grid, stream.child(start), m, backend)
        aborted += int((st != 0).sum())
        rhos[start : start + m] = np.where(st != 0, np.nan, rho)
    if aborted > ABORT_TOLERANCE * paths:
        raise AbortRateError(aborted, paths)
    good = rhos[np.isfinite(rhos)]
    mean, se = _mean_se(good)
    return GirsanovReport(mean, se, float(good.max()), paths)


# ---------------------------------------------------------------------------
# target paths for the tube probe
# ---------------------------------------------------------------------------


def make_target(kind: str, grid: TimeGrid, x0: float, **params) -> Path:
    """Deterministic target paths starting at x0: const, line, sine."""
    t = grid.nodes()
    if kind == "const":
        v = np.full_like(t, x0)
    elif kind == "line":
        v = x0 + params.get("slope", 1.0) * t
    elif kind == "sine":
        amp = params.get("amp", 0.3)
        freq = params.get("freq", 1.0)
        v = x0 + amp * np.sin(2.0 * math.pi * freq * t)
    else:
        raise ValidationError(f"unknown target '{kind}'; known: const, line, sine")
    return Path(grid, v[:, None])
