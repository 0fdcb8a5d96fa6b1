"""Pseudo-diffusions driven by an fBm path.

Every solver takes a sampled fBm path (any grid containing 0) and returns a
:class:`~fbmstat.fbm_engine.SampledProcess` on the same grid, with ``X(t) = c``
for ``t < 0``.  Time integrals ``int_0^t`` use the cumulative trapezoid
rule on that grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicHermiteSpline

from .fbm_engine import SampledProcess

__all__ = [
    "FAMILIES",
    "ModelSpec",
    "ScalarFunction",
    "parse_function",
    "function_names",
    "solve_closed_form",
    "solve_ode_K",
    "solve_general_mu_zero",
    "solve_affine",
    "solve_general_euler",
    "validate_h1_h2",
    "H1H2Report",
    "simulate_model",
    "BlowUpError",
]

FAMILIES = ("M4_additive", "M5_ou", "M6_geometric", "M7_mixed", "GeneralMuZero", "AffineSigma", "GeneralEuler")
CLOSED_FORM = FAMILIES[:4]
# families observed through Z^X = eps^(2-h) X''_eps / (sigma_2H X_eps)
MULTIPLICATIVE = ("M6_geometric", "M7_mixed")


class BlowUpError(RuntimeError):
    pass


# --- function catalog ------------------------------------------------------


@dataclass(frozen=True)
class ScalarFunction:
    """A named scalar function with its derivative."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x):
        return self.f(np.asarray(x, dtype=float))


def _catalog(v: float) -> dict[str, tuple[Callable, Callable]]:
    return {
        "const": (lambda x: np.full_like(x, v), lambda x: np.zeros_like(x)),
        "linear": (lambda x: v * x, lambda x: np.full_like(x, v)),
        "sin_offset": (lambda x: v + np.sin(x), np.cos),
        "bump_offset": (lambda x: v + 1.0 / (1.0 + x * x), lambda x: -2.0 * x / (1.0 + x * x) ** 2),
        "quad_offset": (lambda x: v + x * x, lambda x: 2.0 * x),
        "tanh": (lambda x: v * np.tanh(x), lambda x: v / np.cosh(x) ** 2),
    }


def function_names() -> tuple[str, ...]:
    return tuple(_catalog(0.0))


def parse_function(text: str | float | ScalarFunction) -> ScalarFunction:
    """Build a function from ``"name:value"`` (e.g. ``"sin_offset:2.0"``); a bare number means ``const``.

    ``const:v`` is ``v``; ``linear:v`` is ``v x``; ``sin_offset:v`` is
    ``v + sin x``; ``bump_offset:v`` is ``v + 1/(1+x^2)``;
    ``quad_offset:v`` is ``v + x^2``; ``tanh:v`` is ``v tanh x``.
    """
    if isinstance(text, ScalarFunction):
        return text
    if callable(text):
        fn = text
        # central difference when no derivative is supplied
        return ScalarFunction(getattr(fn, "__name__", "callable"), fn,
                              lambda x: (fn(x + 1e-6) - fn(x - 1e-6)) / 2e-6)
    if isinstance(text, (int, float)):
        text = f"const:{text!r}"
    name, _, val = str(text).partition(":")
    if not _:
        try:
            return parse_function(float(name))
        except ValueError:
            raise ValueError(f"function spec {text!r} must look like name:value") from None
    cat = _catalog(float(val))
    if name not in cat:
        raise ValueError(f"unknown function {name!r}; choose from {', '.join(cat)}")
    f, df = cat[name]
    return ScalarFunction(str(text), f, df)


# --- model specification ---------------------------------------------------


@dataclass
class ModelSpec:
    """Which pseudo-diffusion to build and with which parameters.

    ``sigma`` and ``mu`` are scalars for the closed-form families and
    :class:`ScalarFunction` (or catalog strings) for ``GeneralMuZero`` and
    ``GeneralEuler``.  ``AffineSigma`` uses ``a``, ``b``, ``mu`` and
    ``mu_mode`` (``"constant"`` or ``"linear"``).
    """

    family: str
    sigma: float | ScalarFunction | str = 1.0
    mu: float | ScalarFunction | str = 0.0
    c: float = 0.0
    a: float = 0.0
    b: float = 0.0
    mu_mode: str = "constant"
    ode_tol: float = 1e-10
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {', '.join(FAMILIES)}")
        if self.family in CLOSED_FORM:
            self.sigma, self.mu = float(self.sigma), float(self.mu)
            if self.sigma <= 0:
                raise ValueError("sigma must be positive")
        if self.family == "M7_mixed" and self.mu * self.c < 0:
            raise ValueError("M7_mixed needs mu and c of the same sign (mu may be 0)")
        if self.family == "AffineSigma":
            if self.a == 0:
                raise ValueError("AffineSigma needs a != 0")
            if self.mu_mode not in ("constant", "linear"):
                raise ValueError("mu_mode must be 'constant' or 'linear'")
            self.mu = float(self.mu)
        if self.family == "GeneralMuZero":
            self.sigma = parse_function(self.sigma)
        if self.family == "GeneralEuler":
            self.sigma, self.mu = parse_function(self.sigma), parse_function(self.mu)

    @property
    def multiplicative(self) -> bool:
        return self.family in MULTIPLICATIVE


# --- helpers -----------------------------------------------------------------


def _split(path) -> tuple[int, np.ndarray, np.ndarray]:
    k0 = path.zero_index if hasattr(path, "zero_index") else int(round(-path.t0 / path.dt))
    t = path.t0 + path.dt * np.arange(len(path.values))
    return k0, t, np.asarray(path.values, dtype=float)


def _cumint(values: np.ndarray, dt: float) -> np.ndarray:
    return cumulative_trapezoid(values, dx=dt, initial=0.0)


def _finish(path, k0: int, pos: np.ndarray, c: float) -> SampledProcess:
    out = np.empty(len(path.values))
    out[:k0] = c
    out[k0:] = pos
    return SampledProcess(path.t0, path.dt, out)


def _expm1_over(a: float, x: np.ndarray) -> np.ndarray:
    """``(exp(a x) - 1) / a``, continuous at ``a = 0``."""
    return x if a == 0 else np.expm1(a * x) / a


# --- closed forms -------------------------------------------------------------


def solve_closed_form(spec: ModelSpec, path) -> SampledProcess:
    """Exact solutions of the four parametric models.

    ``M4``: ``sigma b + mu t + c``.  ``M5``:
    ``sigma b + e^{mu t}[sigma mu int_0^t b e^{-mu s} ds + c]``.
    ``M6``: ``c exp(mu t + sigma b)``.  ``M7``:
    ``e^{sigma b}(c + mu int_0^t e^{-sigma b} ds)``.
    """
    if spec.family not in CLOSED_FORM:
        raise ValueError(f"{spec.family} has no closed form")
    k0, t, b = _split(path)
    t, b = t[k0:], b[k0:]
    s, mu, c = spec.sigma, spec.mu, spec.c
    if spec.family == "M4_additive":
        x = s * b + mu * t + c
    elif spec.family == "M5_ou":
        x = s * b + np.exp(mu * t) * (s * mu * _cumint(b * np.exp(-mu * t), path.dt) + c)
    elif spec.family == "M6_geometric":
        x = c * np.exp(mu * t + s * b)
    else:
        x = np.exp(s * b) * (c + mu * _cumint(np.exp(-s * b), path.dt))
    return _finish(path, k0, x, spec.c)


def solve_affine(a: float, b: float, mu_mode: str, mu: float, c: float, path) -> SampledProcess:
    """Solution of ``dX = (a X + b) db_H + mu(X) dt`` with ``mu(X) = mu`` or ``mu X``.

    Uses ``expm1`` so the ``a -> 0`` limit (``b b_H + mu t + c`` resp. the
    OU form) is reached without cancellation.
    """
    if a == 0:
        raise ValueError("a must be nonzero")
    k0, t, bh = _split(path)
    t, bh = t[k0:], bh[k0:]
    base = b * _expm1_over(a, bh)
    if mu_mode == "constant":
        x = base + np.exp(a * bh) * (mu * _cumint(np.exp(-a * bh), path.dt) + c)
    elif mu_mode == "linear":
        # (1 - e^{-a b_H}) / a
        inner = np.exp(-mu * t) * _expm1_over(-a, bh)
        x = base + np.exp(mu * t + a * bh) * (b * mu * _cumint(inner, path.dt) + c)
    else:
        raise ValueError("mu_mode must be 'constant' or 'linear'")
    return _finish(path, k0, x, c)


# --- ODE route for mu = 0 ----------------------------------------------------


def _rk4(f, y: float, h: float) -> float:
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def _integrate_one_way(f, c: float, t_end: float, tol: float, bound: float, h_max: float):
    direction = 1.0 if t_end >= 0 else -1.0
    ts, ys = [0.0], [c]
    t, y = 0.0, c
    h = min(h_max, 1e-2)
    while direction * (t_end - t) > 1e-15:
        h = min(h, abs(t_end - t))
        step = direction * h
        full = _rk4(f, y, step)
        half = _rk4(f, _rk4(f, y, 0.5 * step), 0.5 * step)
        err = abs(half - full) / 15.0
        if not np.isfinite(half) or err > tol * max(1.0, abs(half)):
            if h < 1e-12 or not np.isfinite(half) and h < 1e-9:
                raise BlowUpError(f"ODE solution escapes near time {t:.6g}")
            h *= 0.5
            continue
        t += step
        y = half + (half - full) / 15.0
        if abs(y) > bound:
            raise BlowUpError(f"|K| exceeds {bound:g} at time {t:.6g}")
        ts.append(t)
        ys.append(y)
        if err < tol / 64.0:
            h = min(2.0 * h, h_max)
    return ts, ys


def solve_ode_K(sigma_fn, c: float, y_range: tuple[float, float], tol: float = 1e-10,
                bound: float = 1e12, h_max: float = 0.01) -> CubicHermiteSpline:
    """Solve ``K' = sigma(K), K(0) = c`` on ``y_range`` (which must contain 0).

    Adaptive RK4 with step doubling (local error per step ``<= tol``, scaled
    by ``max(1, |K|)``), run forward and backward from 0.  The returned
    callable is the cubic Hermite interpolant through the accepted steps,
    using ``sigma(K)`` as slopes.
    """
    sig = parse_function(sigma_fn)
    lo, hi = min(y_range[0], 0.0), max(y_range[1], 0.0)

    def f(y):
        return float(sig(np.asarray(y)))

    ts_b, ys_b = _integrate_one_way(f, c, lo, tol, bound, h_max) if lo < 0 else ([0.0], [c])
    ts_f, ys_f = _integrate_one_way(f, c, hi, tol, bound, h_max) if hi > 0 else ([0.0], [c])
    ts = np.array(ts_b[::-1] + ts_f[1:])
    ys = np.array(ys_b[::-1] + ys_f[1:])
    if len(ts) < 2:
        # degenerate range: K is constant c on {0}
        ts, ys = np.array([-1e-12, 1e-12]), np.array([c, c])
    slopes = np.asarray(sig(ys), dtype=float) * np.ones_like(ys)
    return CubicHermiteSpline(ts, ys, slopes, extrapolate=False)


def solve_general_mu_zero(sigma_fn, c: float, path, tol: float = 1e-10) -> SampledProcess:
    """``X(t) = K(b_H(t))`` with ``K`` from :func:`solve_ode_K`."""
    k0, _, bh = _split(path)
    pos = bh[k0:]
    K = solve_ode_K(sigma_fn, c, (float(pos.min()), float(pos.max())), tol=tol)
    return _finish(path, k0, K(pos), c)


def solve_general_euler(sigma_fn, mu_fn, c: float, path) -> SampledProcess:
    """Explicit Euler scheme; a first-order pathwise approximation (approximate, not for acceptance)."""
    sig, mu = parse_function(sigma_fn), parse_function(mu_fn)
    k0, _, bh = _split(path)
    db = np.diff(bh[k0:])
    x = np.empty(len(db) + 1)
    x[0] = c
    for j, inc in enumerate(db):
        xj = x[j]
        x[j + 1] = xj + float(sig(xj)) * inc + float(mu(xj)) * path.dt
        if not math.isfinite(x[j + 1]):
            raise BlowUpError(f"Euler state is not finite at step {j + 1}")
    return _finish(path, k0, x, c)


def simulate_model(spec: ModelSpec, path) -> SampledProcess:
    """Dispatch on ``spec.family``."""
    if spec.family in CLOSED_FORM:
        return solve_closed_form(spec, path)
    if spec.family == "AffineSigma":
        return solve_affine(spec.a, spec.b, spec.mu_mode, spec.mu, spec.c, path)
    if spec.family == "GeneralMuZero":
        return solve_general_mu_zero(spec.sigma, spec.c, path, tol=spec.ode_tol)
    return solve_general_euler(spec.sigma, spec.mu, spec.c, path)


# --- hypothesis checks ------------------------------------------------------


@dataclass
class H1H2Report:
    """Heuristic checks on a probe grid; sampling cannot prove global properties."""

    clauses: dict[str, tuple[bool, float]]
    heuristic: bool = True

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.clauses.values())


def _holder_exponent(x: np.ndarray, y: np.ndarray) -> float:
    dx = x[1] - x[0]
    lags = np.unique(np.geomspace(1, max(2, len(x) // 8), 8).astype(int))
    osc = np.array([np.max(np.abs(y[lag:] - y[:-lag])) for lag in lags])
    if np.all(osc < 1e-14):
        return 1.0
    osc = np.maximum(osc, 1e-300)
    slope = np.polyfit(np.log(lags * dx), np.log(osc), 1)[0]
    return float(min(slope, 1.0))


def validate_h1_h2(sigma_fn, mu_fn, probe_grid, h: float = 0.7) -> H1H2Report:
    """Probe the regularity hypotheses on ``sigma`` and ``mu``.

    Clauses: ``sigma_away_from_zero`` (min ``|sigma|``),
    ``sigma_lipschitz`` (max finite-difference slope), ``sigma_dot_holder``
    (estimated Hölder exponent of ``sigma'``, must exceed ``1/h - 1``),
    ``mu_bounded`` (max ``|mu|``) and ``mu_lipschitz``.
    """
    x = np.asarray(probe_grid, dtype=float)
    if len(x) < 1000:
        raise ValueError("probe grid needs at least 1000 points")
    sig, mu = parse_function(sigma_fn), parse_function(mu_fn)
    s, m = sig(x), mu(x)
    ds = sig.df(x) if isinstance(sig, ScalarFunction) else np.gradient(s, x)
    lip = lambda v: float(np.max(np.abs(np.diff(v) / np.diff(x))))
    min_s = float(np.min(np.abs(s)))
    eta = _holder_exponent(x, ds)
    clauses = {
        "sigma_away_from_zero": (min_s > 1e-8, min_s),
        "sigma_lipschitz": (bool(np.isfinite(lip(s))), lip(s)),
        "sigma_dot_holder": (eta > 1.0 / h - 1.0, eta),
        "mu_bounded": (bool(np.all(np.isfinite(m))), float(np.max(np.abs(m)))),
        "mu_lipschitz": (bool(np.isfinite(lip(m))), lip(m)),
    }
    return H1H2Report(clauses)
