import numpy as np
import pytest

from wzsim.coeffs import CorrectionMatrix
from wzsim.core import Path, RngStream, make_grid, sample_brownian, ValidationError
from wzsim.noise import Mollified, PiecewiseShape, build_approximation
from wzsim.registry import (
    const_diffusion,
    const_drift,
    indicator_drift,
    linear_diffusion,
    sin_bump_drift,
    sin_elliptic_diffusion,
    zero_drift,
)
from wzsim.shapes import bump_kernel, linear_shape
from wzsim.solvers import (
    SolverAbort,
    SolverConfig,
    coupled_run,
    solve_ito_corrected,
    solve_random_ode,
)

HALF = CorrectionMatrix.half_identity(1)
LIN = PiecewiseShape(linear_shape())


def test_additive_noise_is_exact():
    w = sample_brownian(make_grid(1.0, 512), 1, RngStream(1, 0))
    x = solve_ito_corrected(zero_drift(), const_diffusion(2.0), HALF, 0.3, w)
    assert np.max(np.abs(x.values[:, 0] - (0.3 + 2.0 * w.values[:, 0]))) < 1e-12


def test_zero_noise_constant_sigma_keeps_state():
    g = make_grid(1.0, 128)
    w = Path(g, np.zeros((129, 1)))
    x = solve_ito_corrected(zero_drift(), const_diffusion(1.0), HALF, 0.7, w)
    assert np.all(x.values == 0.7)


def test_geometric_oracle_em():
    # corrected equation with sigma(x) = x and c = 1/2 is dX = X/2 dt + X dW,
    # whose strong solution is x0 exp(W_t)
    g = make_grid(1.0, 1 << 14)
    errs = []
    for i in range(300):
        w = sample_brownian(g, 1, RngStream(404, i))
        x = solve_ito_corrected(zero_drift(), linear_diffusion(), HALF, 1.0, w)
        oracle = np.exp(w.values[-1, 0])
        errs.append((x.values[-1, 0] - oracle) / oracle)
    rms = float(np.sqrt(np.mean(np.square(errs))))
    assert rms < 1e-2


def test_refining_the_grid_halves_the_squared_error():
    # strong order 1/2: doubling the step count scales the terminal RMS by
    # ~1/sqrt(2); tolerance brackets a factor-2 slack either way
    rms = {}
    for steps in (1 << 10, 1 << 11):
        g = make_grid(1.0, steps)
        errs = []
        for i in range(1000):
            w = sample_brownian(g, 1, RngStream(708, i))
            x = solve_ito_corrected(zero_drift(), linear_diffusion(), HALF, 1.0, w)
            errs.append(x.values[-1, 0] - np.exp(w.values[-1, 0]))
        rms[steps] = float(np.sqrt(np.mean(np.square(errs))))
    factor = rms[1 << 11] / rms[1 << 10]
    assert 0.5 / np.sqrt(2) <= factor <= 2.0 / np.sqrt(2)


def test_overflow_aborts_with_diagnostic():
    w = sample_brownian(make_grid(1.0, 64), 1, RngStream(2, 0))
    huge = const_drift(1e13)
    with pytest.raises(SolverAbort) as exc:
        solve_ito_corrected(huge, const_diffusion(1.0), HALF, 0.0, w)
    assert exc.value.step >= 1


def test_x0_dimension_checked():
    w = sample_brownian(make_grid(1.0, 16), 1, RngStream(3, 0))
    with pytest.raises(ValidationError):
        solve_ito_corrected(zero_drift(), const_diffusion(1.0), HALF, [0.0, 1.0], w)


# ---------------------------------------------------------------------------
# random ODE
# ---------------------------------------------------------------------------


def _approx(n=32, steps=512, seed=9, sid=1, family=LIN):
    w = sample_brownian(make_grid(1.0, steps), 1, RngStream(seed, sid))
    return build_approximation(family, w, n)


def _zero_sigma():
    from wzsim.coeffs import DiffusionField
    from wzsim.registry import DIFF_CONST

    return DiffusionField(dim=1,
                          sigma=lambda x: np.zeros((x.shape[0], 1, 1)),
                          grad=lambda x: np.zeros((x.shape[0], 1, 1, 1)),
                          ellipticity=np.inf, elliptic=False,
                          kernel_id=DIFF_CONST, kernel_params=(0.0,),
                          name="zero_sigma")


def test_ode_constant_drift_no_noise():
    ap = _approx()
    x = solve_random_ode(const_drift(1.7), _zero_sigma(), ap, 0.2, m_ode=8)
    t = x.grid.nodes()
    assert np.max(np.abs(x.values[:, 0] - (0.2 + 1.7 * t))) < 1e-10


def test_ode_additive_noise_reproduces_the_smoothed_path():
    ap = _approx()
    x = solve_random_ode(zero_drift(), const_diffusion(3.0), ap, 0.5, m_ode=8)
    t = x.grid.nodes()
    wn = ap.values_at(t)[:, 0]
    assert np.max(np.abs(x.values[:, 0] - (0.5 + 3.0 * (wn - wn[0])))) < 1e-8


@pytest.mark.parametrize("family,tol", [(LIN, 1e-6), (Mollified(bump_kernel()), 1e-5)])
def test_ode_exponential_oracle(family, tol):
    # the mollified driver is sharply peaked (bump kernel), which costs the
    # one-step integrator about a digit relative to the polygonal driver
    ap = _approx(family=family)
    x = solve_random_ode(zero_drift(), linear_diffusion(), ap, 1.0, m_ode=16)
    t = x.grid.nodes()
    wn = ap.values_at(t)[:, 0]
    oracle = np.exp(wn - wn[0])
    assert np.max(np.abs(x.values[:, 0] / oracle - 1.0)) < tol


def test_kink_alignment_two_half_windows_equal_one():
    ap = _approx(n=8)
    full = solve_random_ode(sin_bump_drift(), sin_elliptic_diffusion(), ap, 0.4,
                            m_ode=8, block_start=2, block_end=4)
    first = solve_random_ode(sin_bump_drift(), sin_elliptic_diffusion(), ap, 0.4,
                             m_ode=8, block_start=2, block_end=3)
    second = solve_random_ode(sin_bump_drift(), sin_elliptic_diffusion(), ap,
                              first.values[-1, 0], m_ode=8, block_start=3, block_end=4)
    assert abs(full.values[-1, 0] - second.values[-1, 0]) < 1e-12


def test_ode_requires_smooth_drift_metadata():
    ap = _approx()
    singular = indicator_drift()
    with pytest.raises(ValidationError):
        solve_random_ode(singular, const_diffusion(1.0), ap, 0.0)


# ---------------------------------------------------------------------------
# coupled runs
# ---------------------------------------------------------------------------


def test_coupled_additive_error_equals_direct_computation():
    cfg = SolverConfig(n_ref=1 << 10, m_ode=16)
    s0 = 1.5
    r = coupled_run(zero_drift(), zero_drift(), const_diffusion(s0), HALF, LIN,
                    16, 0.0, RngStream(5, 77), cfg)
    w = sample_brownian(cfg.grid(), 1, RngStream(5, 77).child(0))
    ap = build_approximation(LIN, w, 16)
    nodes = cfg.grid().nodes()
    direct = s0 * np.max(np.abs(w.values[:, 0] - ap.values_at(nodes)[:, 0]))
    assert abs(r.sup_error - direct) < 1e-10


def test_coupled_run_is_deterministic():
    cfg = SolverConfig(n_ref=1 << 10, m_ode=16)
    args = (sin_bump_drift(), sin_bump_drift(), sin_elliptic_diffusion(), HALF, LIN,
            16, 0.0, RngStream(5, 78), cfg)
    assert coupled_run(*args).sup_error == coupled_run(*args).sup_error


def test_coupled_error_shrinks_with_n_for_smooth_setup():
    cfg = SolverConfig(n_ref=1 << 11, m_ode=16)
    sups = {}
    for n in (8, 128):
        acc = 0.0
        for i in range(20):
            r = coupled_run(sin_bump_drift(), sin_bump_drift(), sin_elliptic_diffusion(),
                            HALF, LIN, n, 0.0, RngStream(6, 1000 + i), cfg)
            acc += r.sup_error**2
        sups[n] = acc / 20
    assert sups[128] < sups[8]


def test_coupled_identity_coupling_is_exact_for_additive_noise():
    # n = n_ref with the polygonal family: the smoothed path hits every grid
    # node, both solvers are exact, so the coupled error vanishes
    cfg = SolverConfig(n_ref=256, m_ode=16)
    r = coupled_run(zero_drift(), zero_drift(), const_diffusion(2.0), HALF, LIN,
                    256, 0.0, RngStream(7, 0), cfg)
    assert r.sup_error < 1e-12


def test_coupled_rejects_incompatible_n_ref():
    cfg = SolverConfig(n_ref=1000, m_ode=16)
    with pytest.raises(ValidationError):
        coupled_run(zero_drift(), zero_drift(), const_diffusion(1.0), HALF, LIN,
                    16, 0.0, RngStream(8, 0), cfg)
