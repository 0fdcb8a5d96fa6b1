"""Tests of ``sigma = sigma0`` against contiguous alternatives.

F-variants perturb the scale, ``sigma_eps = sigma0 + sqrt(eps) (d + F(sqrt(eps)))``;
G-variants perturb towards an affine diffusion coefficient
``sigma_eps(x) = a x + b``.  All rejection regions are one-sided (the
alternatives have ``d > 0``).

The G statistics use the squared second derivative ``Y''_eps``; that is the
quantity normalised by ``eps^(2(2-H)) / sigma_2H^2``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from math import pi, sqrt
from typing import Callable

import numpy as np
from scipy import optimize, stats
from scipy.integrate import trapezoid

from .constants import g_coeffs, sigma_g_sq, spectral_variance
from .fbm_engine import check_hurst, make_grid, sample_fbm
from .kernels import SmoothedProcess, smooth
from .models import ModelSpec, solve_affine, solve_closed_form

__all__ = [
    "VARIANTS",
    "TestSpec",
    "TestReport",
    "shift_function",
    "simulate_alternative",
    "f_statistic",
    "g_statistic",
    "statistic",
    "test_decision",
    "null_scale",
    "replicate_statistic",
    "power_curve",
]

VARIANTS = ("F_const", "F_mult", "G_const_to_affine", "G_mult_to_affine")
G_NOTE = "G statistic uses the squared second derivative of Y_eps"

_SHIFTS: dict[str, Callable[[float], float]] = {
    "identity": lambda s: s,
    "zero": lambda s: 0.0,
    "sqrt": lambda s: sqrt(s),
    "square": lambda s: s * s,
}


def shift_function(name: str) -> Callable[[float], float]:
    """Catalog of vanishing shifts ``F`` (``F(s) -> 0`` as ``s -> 0``)."""
    if name not in _SHIFTS:
        raise ValueError(f"unknown shift {name!r}; choose from {', '.join(_SHIFTS)}")
    return _SHIFTS[name]


@dataclass
class TestSpec:
    """One test configuration.

    ``mu_mode`` selects the drift: ``"constant"`` (``mu``) or ``"linear"``
    (``mu x``).  With ``d = 0`` the data come from the null model whatever
    ``f_shift`` is.
    """

    __test__ = False  # not a pytest class

    variant: str
    sigma0: float
    d: float = 0.0
    f_shift: str = "identity"
    mu_mode: str = "constant"
    mu: float = 0.0
    c: float = 1.0
    h: float = 0.7
    alpha: float = 0.05
    kernel: str = "second_difference"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        if self.d < 0:
            raise ValueError("d must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.mu_mode not in ("constant", "linear"):
            raise ValueError("mu_mode must be 'constant' or 'linear'")
        shift_function(self.f_shift)
        check_hurst(self.h, estimator=True)

    @property
    def multiplicative(self) -> bool:
        return self.variant in ("F_mult", "G_mult_to_affine")

    def perturbation(self, eps: float) -> float:
        """``sqrt(eps) (d + F(sqrt(eps)))``, or 0 under the null."""
        if self.d == 0.0:
            return 0.0
        s = sqrt(eps)
        return s * (self.d + shift_function(self.f_shift)(s))

    def sigma_eps(self, eps: float) -> float:
        val = self.sigma0 + (self.perturbation(eps) if self.variant.startswith("F") else 0.0)
        if val <= 0:
            raise ValueError(f"sigma_eps = {val} is not positive")
        return val

    def null_model(self, sigma: float | None = None) -> ModelSpec:
        s = self.sigma0 if sigma is None else sigma
        if self.multiplicative:
            family = "M6_geometric" if self.mu_mode == "linear" else "M7_mixed"
        else:
            family = "M5_ou" if self.mu_mode == "linear" else "M4_additive"
        return ModelSpec(family, sigma=s, mu=self.mu, c=self.c)


@dataclass
class TestReport:
    __test__ = False

    statistic: float
    center: float
    scale: float
    p_value: float
    reject: bool
    variant: str
    mc_context: dict = field(default_factory=dict)
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def simulate_alternative(spec: TestSpec, path, eps: float, orders=(0, 2)):
    """Return ``(X, Y_eps)``: the solution under ``spec`` and its smoothing at ``eps``."""
    pert = spec.perturbation(eps)
    if spec.variant.startswith("F") or pert == 0.0:
        x = solve_closed_form(spec.null_model(spec.sigma_eps(eps)), path)
    elif spec.variant == "G_const_to_affine":
        x = solve_affine(pert, spec.sigma0, spec.mu_mode, spec.mu, spec.c, path)
    else:
        x = solve_affine(spec.sigma0, pert, spec.mu_mode, spec.mu, spec.c, path)
    return x, smooth(x, spec.kernel, eps, orders)


def f_statistic(y: SmoothedProcess, sigma0: float, h: float, variant: str = "F_const") -> float:
    """``eps^(-1/2) [sqrt(pi/2) eps^(2-H) / sigma_2H int |Y''| - sigma0 * (1 or int |Y|)]``."""
    eps = y.eps
    s2 = spectral_variance(2, h, y.kernel, method="time_domain", verify=False)
    lead = sqrt(pi / 2.0) * eps ** (2.0 - h) / sqrt(s2) * y.integral(np.abs(y.require(2)))
    center = sigma0 * (y.integral(np.abs(y.require(0))) if variant == "F_mult" else 1.0)
    return (lead - center) / sqrt(eps)


def g_statistic(y: SmoothedProcess, sigma0: float, h: float, variant: str = "G_const_to_affine") -> float:
    """``eps^(-1/2) [eps^(2(2-H)) / sigma_2H^2 int Y''^2 - sigma0^2 * (1 or int Y^2)]``."""
    eps = y.eps
    s2 = spectral_variance(2, h, y.kernel, method="time_domain", verify=False)
    lead = eps ** (2.0 * (2.0 - h)) / s2 * y.integral(y.require(2) ** 2)
    center = sigma0**2 * (y.integral(y.require(0) ** 2) if variant == "G_mult_to_affine" else 1.0)
    return (lead - center) / sqrt(eps)


def statistic(spec: TestSpec, y: SmoothedProcess) -> float:
    if spec.variant.startswith("F"):
        return f_statistic(y, spec.sigma0, spec.h, spec.variant)
    return g_statistic(y, spec.sigma0, spec.h, spec.variant)


def null_scale(spec: TestSpec, y: SmoothedProcess | None = None) -> float:
    """Standard deviation of the null limit.

    ``sigma_g1 sigma`` (F_const) and ``sigma_g2 sigma^2`` (G_const).  The
    multiplicative nulls are mixed Gaussian; they are studentised by the
    plug-ins ``sqrt(int Y^2)`` resp. ``sqrt(int Y^4)``.
    """
    k = 1 if spec.variant.startswith("F") else 2
    sg = sqrt(sigma_g_sq(g_coeffs(k), spec.h, spec.kernel))
    scale = sg * spec.sigma0**k
    if spec.multiplicative:
        if y is None:
            raise ValueError("multiplicative variants need the observed process for the plug-in scale")
        scale *= sqrt(y.integral(np.abs(y.require(0)) ** (2 * k)))
    return scale


def test_decision(stat: float, spec: TestSpec, y: SmoothedProcess | None = None, scale: float | None = None,
                  mc_context: dict | None = None) -> TestReport:
    """One-sided decision: reject when ``stat / scale > z_{1 - alpha}``."""
    if scale is None:
        scale = null_scale(spec, y)
    p = float(stats.norm.sf(stat / scale))
    return TestReport(statistic=float(stat), center=0.0, scale=float(scale), p_value=p, reject=p < spec.alpha,
                      variant=spec.variant, mc_context=dict(mc_context or {}),
                      note=G_NOTE if spec.variant.startswith("G") else "")


# --- Monte Carlo helpers --------------------------------------------------------


def replicate_statistic(spec: TestSpec, eps: float, seed: int, dt: float | None = None) -> dict:
    """One replicate: statistic, decision and path functionals of the exact solution."""
    dt = eps / 16.0 if dt is None else dt
    t0, n = make_grid(eps, dt)
    path = sample_fbm(spec.h, n, t0, dt, seed)
    x, y = simulate_alternative(spec, path, eps)
    stat = statistic(spec, y)
    rep = test_decision(stat, spec, y, mc_context={"seed": seed})
    k0 = path.zero_index
    xs = x.values[k0 : k0 + int(round(1.0 / dt)) + 1]
    return {
        "seed": seed,
        "statistic": stat,
        "reject": rep.reject,
        "p_value": rep.p_value,
        "int_x": float(trapezoid(xs, dx=dt)),
        "int_abs_x": float(trapezoid(np.abs(xs), dx=dt)),
    }


def power_curve(template: TestSpec, d_values, replicates: int, eps: float, base_seed: int = 0,
                threads: int = 1) -> list[dict]:
    """Rejection rate per ``d``; each row also carries the isotonic-fit deviation."""
    from .mc_harness import run_replicates

    if replicates < 100:
        raise ValueError("replicates must be >= 100")
    rows = []
    for d in d_values:
        spec = TestSpec(**{**asdict(template), "d": float(d)})
        out = run_replicates(lambda seed: replicate_statistic(spec, eps, seed), replicates, base_seed, threads)
        ok = [r for r in out.results if r is not None]
        rate = float(np.mean([r["reject"] for r in ok]))
        rows.append({"d": float(d), "rejection_rate": rate, "replicates": len(ok), "failures": out.n_failed})
    rates = np.array([r["rejection_rate"] for r in rows])
    iso = optimize.isotonic_regression(rates).x
    for row, fit in zip(rows, iso):
        row["isotonic_deviation"] = float(abs(row["rejection_rate"] - fit))
    return rows
