"""Named coefficient fields and noise families addressable from run configs.

Every registry field is vectorized numpy on the Python side and carries the
integer code its closed form has inside the compiled solver kernels, so the
fast path and the fallback evaluate the same formula.
"""

from __future__ import annotations

import math

import numpy as np

from .core import ValidationError
from .coeffs import (
    DiffusionField,
    DriftField,
    indicator_drift,
    mollified_indicator,
    ramp_approximation,
)
from .noise import McShane, Mollified, NoiseFamily, PiecewiseShape
from .shapes import get_kernel, get_shape

# drift kernel codes (keep in sync with _kernels._drift_eval)
DRIFT_ZERO = 0
DRIFT_CONST = 1
DRIFT_INDICATOR = 2
DRIFT_RAMP = 3
DRIFT_MOLLIFIED = 4
DRIFT_GAUSS_BUMP = 5
DRIFT_SIN_BUMP = 6

# diffusion kernel codes (keep in sync with _kernels._sigma_eval)
DIFF_CONST = 0
DIFF_SIN = 1
DIFF_LINEAR = 2


def zero_drift(d: int = 1) -> DriftField:
    return DriftField(dim=d, fn=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                      support_radius=1.0, sup_value=0.0, sup_grad=0.0,
                      lp_norm_fn=lambda p: 0.0, kernel_id=DRIFT_ZERO, name="zero")


def const_drift(v: float, d: int = 1) -> DriftField:
    return DriftField(dim=d, fn=lambda x: np.full_like(np.asarray(x, dtype=float), v),
                      sup_value=abs(v), sup_grad=0.0,
                      kernel_id=DRIFT_CONST, kernel_params=(v,), name=f"const[{v:g}]")


def gaussian_bump_drift(amp: float = 1.0, width: float = 1.0) -> DriftField:
    """b(x) = amp * exp(-x^2 / 2 width^2); unbounded support, analytic L^p norm."""
    def fn(x, a=amp, w=width):
        x = np.asarray(x, dtype=float)
        return a * np.exp(-(x * x) / (2.0 * w * w))

    def norm(p, a=amp, w=width):
        return abs(a) * (w * math.sqrt(2.0 * math.pi / p)) ** (1.0 / p)

    return DriftField(dim=1, fn=fn, support_radius=np.inf,
                      sup_value=abs(amp), sup_grad=abs(amp) * math.exp(-0.5) / width,
                      lp_norm_fn=norm, kernel_id=DRIFT_GAUSS_BUMP,
                      kernel_params=(amp, width), name=f"gaussian_bump[{amp:g},{width:g}]")


def sin_bump_drift(radius: float = 5.0) -> DriftField:
    """b(x) = sin(x) * exp(1 - 1/(1 - (x/radius)^2)) inside |x| < radius, else 0.

    Smooth, compactly supported, C^1 bounds measured once on a fine grid.
    """
    def fn(x, r=radius):
        x = np.asarray(x, dtype=float)
        u = x / r
        out = np.zeros_like(x)
        inside = np.abs(u) < 1.0
        ui = u[inside]
        out[inside] = np.sin(x[inside]) * np.exp(1.0 - 1.0 / (1.0 - ui * ui))
        return out

    xs = np.linspace(-radius, radius, 1 << 14)[:, None]
    vals = fn(xs).ravel()
    sup_v = float(np.max(np.abs(vals)))
    sup_g = float(np.max(np.abs(np.diff(vals))) / (2 * radius / (1 << 14)))
    return DriftField(dim=1, fn=fn, support_radius=radius,
                      sup_value=sup_v, sup_grad=sup_g * 1.01,
                      kernel_id=DRIFT_SIN_BUMP, kernel_params=(radius,),
                      name=f"sin_bump[{radius:g}]")


def _diag_sigma(scalar_fn, scalar_grad_fn, d):
    """Lift a scalar x -> s(x) to the diagonal matrix field diag(s(x_i))."""

    def sigma(x):
        x = np.asarray(x, dtype=float)
        m = x.shape[0]
        out = np.zeros((m, d, d))
        idx = np.arange(d)
        out[:, idx, idx] = scalar_fn(x)
        return out

    def grad(x):
        x = np.asarray(x, dtype=float)
        m = x.shape[0]
        out = np.zeros((m, d, d, d))
        idx = np.arange(d)
        out[:, idx, idx, idx] = scalar_grad_fn(x)
        return out

    return sigma, grad


def const_diffusion(s0: float = 1.0, d: int = 1) -> DiffusionField:
    if s0 <= 0.0:
        raise ValidationError("s0 must be positive")
    sigma, grad = _diag_sigma(lambda x: np.full_like(x, s0), lambda x: np.zeros_like(x), d)
    k = max(s0 * s0, 1.0 / (s0 * s0))
    return DiffusionField(dim=d, sigma=sigma, grad=grad, ellipticity=k,
                          kernel_id=DIFF_CONST, kernel_params=(s0,),
                          name=f"const[{s0:g}]" if s0 != 1.0 else "identity")


def identity_diffusion(d: int = 1) -> DiffusionField:
    return const_diffusion(1.0, d)


def sin_elliptic_diffusion(a: float = 1.0, b: float = 0.5, d: int = 1) -> DiffusionField:
    """sigma(x) = diag(a + b sin x_i); uniformly elliptic when a > |b|."""
    if a <= abs(b):
        raise ValidationError("sin_elliptic needs a > |b| for uniform ellipticity")
    sigma, grad = _diag_sigma(lambda x: a + b * np.sin(x), lambda x: b * np.cos(x), d)
    lo, hi = (a - abs(b)) ** 2, (a + abs(b)) ** 2
    k = max(hi, 1.0 / lo)
    return DiffusionField(dim=d, sigma=sigma, grad=grad, ellipticity=k,
                          kernel_id=DIFF_SIN, kernel_params=(a, b),
                          name=f"sin_elliptic[{a:g},{b:g}]")


def linear_diffusion(d: int = 1) -> DiffusionField:
    """sigma(x) = diag(x_i).  Degenerate at 0: oracle-only, not elliptic."""
    sigma, grad = _diag_sigma(lambda x: x, lambda x: np.ones_like(x), d)
    return DiffusionField(dim=d, sigma=sigma, grad=grad, ellipticity=np.inf,
                          elliptic=False, kernel_id=DIFF_LINEAR, name="linear")


def _ramp_entry(chi: float | None = None, alpha: float | None = None,
                n: float | None = None) -> DriftField:
    """Ramp surrogate, either at an explicit chi or on the alpha-schedule at level n."""
    from .coeffs import schedule_chi

    if chi is None:
        if alpha is None or n is None:
            raise ValidationError("ramp needs chi=.. or alpha=.. n=..")
        chi = schedule_chi(int(n), alpha)
    return ramp_approximation(1, lambda _n: chi)


def _mollified_entry(kappa: float | None = None, alpha: float | None = None,
                     n: float | None = None) -> DriftField:
    """Mollified indicator, at an explicit kappa or on the alpha-schedule at level n."""
    from .coeffs import mollified_sequence

    if kappa is None:
        if alpha is None or n is None:
            raise ValidationError("mollified needs kappa=.. or alpha=.. n=..")
        return mollified_sequence(alpha, p=2.0).generator(int(n))
    return mollified_indicator(kappa)


DRIFTS = {
    "zero": zero_drift,
    "const": const_drift,
    "indicator01": lambda: indicator_drift(),
    "ramp": _ramp_entry,
    "mollified": _mollified_entry,
    "gaussian_bump": gaussian_bump_drift,
    "sin_bump": sin_bump_drift,
}

DIFFUSIONS = {
    "identity": identity_diffusion,
    "const": const_diffusion,
    "sin_elliptic": sin_elliptic_diffusion,
    "linear": linear_diffusion,
}


def get_drift(name: str, **params) -> DriftField:
    try:
        return DRIFTS[name](**params)
    except KeyError:
        raise ValidationError(f"unknown drift '{name}'; known: {sorted(DRIFTS)}") from None


def get_diffusion(name: str, **params) -> DiffusionField:
    try:
        return DIFFUSIONS[name](**params)
    except KeyError:
        raise ValidationError(f"unknown diffusion '{name}'; known: {sorted(DIFFUSIONS)}") from None


def get_family(name: str, **params) -> NoiseFamily:
    if name == "piecewise":
        return PiecewiseShape(get_shape(params.pop("shape", "linear"), **params))
    if name == "mollified":
        return Mollified(get_kernel(params.pop("kernel", "bump")))
    if name == "mcshane":
        return McShane(get_shape(params.pop("f1", "linear")),
                       get_shape(params.pop("f2", "quadratic")))
    raise ValidationError(f"unknown family '{name}'; known: ['piecewise', 'mollified', 'mcshane']")
