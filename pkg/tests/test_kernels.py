"""Compiled kernels against the vectorized numpy fallback."""

import os
import subprocess
import sys

import numpy as np
import pytest

from wzsim import _kernels
from wzsim.coeffs import CorrectionMatrix
from wzsim.core import RngStream, make_grid, sample_brownian_batch
from wzsim.noise import PiecewiseShape, Mollified
from wzsim.registry import (
    const_diffusion,
    indicator_drift,
    linear_diffusion,
    mollified_indicator,
    ramp_approximation,
    sin_bump_drift,
    sin_elliptic_diffusion,
    zero_drift,
    gaussian_bump_drift,
)
from wzsim.shapes import bump_kernel, linear_shape
from wzsim.solvers import em_batch, rk4_batch, _stage_derivs

HALF = CorrectionMatrix.half_identity(1)

needs_numba = pytest.mark.skipif(not _kernels.NUMBA_ENABLED, reason="numba disabled")

DRIFTS = [zero_drift(), indicator_drift(), ramp_approximation(1, lambda n: 3.0),
          mollified_indicator(25.0), gaussian_bump_drift(0.8, 1.2), sin_bump_drift()]
SIGMAS = [const_diffusion(1.5), sin_elliptic_diffusion(1.0, 0.5), linear_diffusion()]


def _increments(paths=16, steps=256, d=1, seed=42):
    g = make_grid(1.0, steps)
    w = sample_brownian_batch(g, d, RngStream(seed, 0), paths)
    return g, w, np.diff(w, axis=1)


@needs_numba
@pytest.mark.parametrize("drift", DRIFTS, ids=lambda f: f.name)
@pytest.mark.parametrize("sigma", SIGMAS, ids=lambda f: f.name)
def test_em_backends_agree(drift, sigma):
    g, _, dw = _increments()
    x0 = np.full((16, 1), 0.4)
    va, sa = em_batch(drift, sigma, HALF, x0, dw, g.dt, backend="numba")
    vb, sb = em_batch(drift, sigma, HALF, x0, dw, g.dt, backend="numpy")
    assert np.array_equal(sa, sb)
    assert np.allclose(va, vb, rtol=1e-12, atol=1e-13)


@needs_numba
@pytest.mark.parametrize("drift", DRIFTS, ids=lambda f: f.name)
@pytest.mark.parametrize("sigma", SIGMAS, ids=lambda f: f.name)
def test_rk4_backends_agree(drift, sigma):
    if drift.name == "indicator01":
        pytest.skip("random ODE route takes smooth drifts")
    g, w, _ = _increments(steps=256)
    fam = PiecewiseShape(linear_shape())
    vst = _stage_derivs(fam, w, 16, 16, 0, 16, 16)
    x0 = np.full((16, 1), 0.4)
    va, sa = rk4_batch(drift, sigma, x0, vst, 1.0 / 256, backend="numba")
    vb, sb = rk4_batch(drift, sigma, x0, vst, 1.0 / 256, backend="numpy")
    assert np.array_equal(sa, sb)
    assert np.allclose(va, vb, rtol=1e-12, atol=1e-13)


@needs_numba
def test_rk4_backends_agree_mollified_driver():
    g, w, _ = _increments(steps=256)
    fam = Mollified(bump_kernel())
    vst = _stage_derivs(fam, w, 16, 16, 0, 16, 16)
    x0 = np.zeros((16, 1))
    va, sa = rk4_batch(sin_bump_drift(), sin_elliptic_diffusion(), x0, vst, 1.0 / 256,
                       backend="numba")
    vb, sb = rk4_batch(sin_bump_drift(), sin_elliptic_diffusion(), x0, vst, 1.0 / 256,
                       backend="numpy")
    assert np.array_equal(sa, sb)
    assert np.allclose(va, vb, rtol=1e-12, atol=1e-13)


@needs_numba
def test_abort_statuses_agree_between_backends():
    g, _, dw = _increments(paths=8, steps=64)
    # start just under the overflow limit so typical growth crosses it
    x0 = np.full((8, 1), 9e11)
    va, sa = em_batch(zero_drift(), linear_diffusion(), HALF, x0, dw, g.dt, backend="numba")
    vb, sb = em_batch(zero_drift(), linear_diffusion(), HALF, x0, dw, g.dt, backend="numpy")
    assert np.array_equal(sa, sb)
    assert np.any(sa > 0)
    nan_a = np.isnan(va)
    assert np.array_equal(nan_a, np.isnan(vb))


def test_env_flag_disables_numba():
    env = dict(os.environ, WZSIM_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c",
         "from wzsim import _kernels; print(_kernels.NUMBA_ENABLED)"],
        env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"


def test_disabled_flag_still_solves():
    env = dict(os.environ, WZSIM_DISABLE_NUMBA="1")
    code = (
        "import numpy as np\n"
        "from wzsim.core import RngStream, make_grid, sample_brownian\n"
        "from wzsim.coeffs import CorrectionMatrix\n"
        "from wzsim.registry import zero_drift, const_diffusion\n"
        "from wzsim.solvers import solve_ito_corrected\n"
        "w = sample_brownian(make_grid(1.0, 64), 1, RngStream(1, 0))\n"
        "x = solve_ito_corrected(zero_drift(), const_diffusion(2.0), "
        "CorrectionMatrix.half_identity(1), 0.3, w)\n"
        "print(float(np.max(np.abs(x.values[:, 0] - (0.3 + 2.0 * w.values[:, 0])))))\n"
    )
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert float(out.stdout.strip()) < 1e-12


def test_d2_runs_through_the_numpy_route():
    d2 = sample_brownian_batch(make_grid(1.0, 8), 2, RngStream(1, 0), 2)
    v, s = em_batch(zero_drift(), const_diffusion(1.0, d=2), CorrectionMatrix.half_identity(2),
                    np.zeros((2, 2)), np.diff(d2, axis=1), 1.0 / 8)
    assert v.shape == (2, 9, 2)
    assert np.all(s == 0)
    assert np.allclose(v[:, 1:], d2[:, 1:], atol=1e-12)
