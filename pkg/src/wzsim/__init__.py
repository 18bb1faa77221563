"""Wong-Zakai co-simulation of SDEs with singular drift.

Builds smoothed Brownian noise families, estimates their correction
coefficients, co-simulates the corrected Ito SDE against the smoothed
random ODE on shared noise, and runs the Monte Carlo harnesses (rates,
stability, tube probabilities, Girsanov weights) behind the ``wzsim`` CLI.
"""

__version__ = "0.1.0"

from .coeffs import (
    CorrectionMatrix,
    DiffusionField,
    DriftApproxSequence,
    DriftField,
    check_hfn,
    correction_drift,
    lp_distance,
    lp_norm,
    mollified_sequence,
    mollify_drift,
    ramp_approximation,
    ramp_sequence,
    schedule_chi,
    schedule_kappa,
    validate_assumptions,
)
from .core import (
    Path,
    RngStream,
    TimeGrid,
    ValidationError,
    make_grid,
    sample_brownian,
    sample_brownian_batch,
    sup_distance,
)
from .experiments import (
    GirsanovReport,
    RateReport,
    StabilityReport,
    TubeReport,
    WongZakaiSetup,
    fit_rate,
    girsanov_mean,
    girsanov_weight,
    mc_mean_sup_error,
    rate_sweep,
    stability_sweep,
    tube_ladder,
    tube_probability,
)
from .noise import (
    ApproxPath,
    CoefficientEstimate,
    CoefficientMatrix,
    McShane,
    Mollified,
    NoiseFamily,
    PiecewiseShape,
    build_approximation,
    check_moment_condition,
    estimate_c,
    estimate_s,
    levy_area,
)
from .shapes import MollifierKernel, ShapeFunction, get_kernel, get_shape
from .solvers import (
    SolverAbort,
    SolverConfig,
    coupled_run,
    solve_ito_corrected,
    solve_random_ode,
)

__all__ = [name for name in dir() if not name.startswith("_")]
