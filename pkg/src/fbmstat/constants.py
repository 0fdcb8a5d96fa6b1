"""Asymptotic constants: spectral variances, lag correlations, Hermite series.

Two independent routes are implemented for the covariance constants:

* Fourier: ``(1/pi) int_0^inf Re[y^p exp(ixy) phi_hat(-by) phi_hat(cy)] dy``
  by adaptive quadrature on ``[0, 50]`` and, beyond, a per-frequency split
  of the integrand integrated with QUADPACK's QAWF (a Filon-type
  Clenshaw-Curtis rule for Fourier integrals).
* Time domain: ``Q(x, b, c) = int int f(s) f(r) |x - b s + c r|^{2h} ds dr``
  with ``f`` the kernel derivative; inner integrals of
  ``polynomial * |u|^{2h}`` are exact, and for large ``|x|`` the binomial
  series of ``|x - w|^{2h}`` in the exact moments of ``f`` is summed.

``sigma_2H^2 = -(v/2) Q_2(0, 1, 1)`` and
``rho_H(x, b, c) = -(v/2) (bc)^{-h} Q_2(x, b, c) / sigma_2H^2``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial, gamma, pi, sqrt
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate, special

from .fbm_engine import check_hurst, v2h_sq
from .kernels import Kernel, builtin_kernel

log = logging.getLogger(__name__)

__all__ = [
    "HermiteSeries",
    "SpectralConstants",
    "QuadratureError",
    "gaussian_abs_moment",
    "hermite_eval",
    "g_coeffs",
    "spectral_variance",
    "rho_H",
    "rho_table",
    "sigma_g_sq",
    "rho_g",
    "sigma_gm_sq",
    "regression_variance",
    "spectral_constants",
]

TAIL_START = 50.0
_QUAD_OPTS = dict(epsabs=1e-14, epsrel=1e-12, limit=400)


class QuadratureError(RuntimeError):
    pass


# --- Gaussian moments and Hermite polynomials ------------------------------


def gaussian_abs_moment(k: float) -> float:
    """``E|N|^k = 2^(k/2) Gamma((k+1)/2) / sqrt(pi)``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return 2.0 ** (k / 2.0) * gamma((k + 1.0) / 2.0) / sqrt(pi)


def hermite_eval(n: int, x):
    """Probabilists' Hermite polynomial ``H_n(x)`` by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    if n == 0:
        return np.ones_like(x)
    prev, cur = np.ones_like(x), x.copy()
    for j in range(1, n):
        prev, cur = cur, x * cur - j * prev
    return cur


@dataclass(frozen=True)
class HermiteSeries:
    """Even Hermite coefficients of ``g_k(x) = |x|^k / E|N|^k - 1``.

    ``coeffs[n - 1]`` is the coefficient of ``H_{2n}``.
    """

    k: float
    coeffs: np.ndarray
    n_max: int
    tail_bound: float

    def weights(self) -> np.ndarray:
        """``coeffs[n]^2 (2n)!``, the chaos variances."""
        return np.array([c * c * factorial(2 * (n + 1)) for n, c in enumerate(self.coeffs)])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return sum(c * hermite_eval(2 * (n + 1), x) for n, c in enumerate(self.coeffs))


def g_coeffs(k: float, n_max: int | None = None) -> HermiteSeries:
    """Closed-form coefficients ``prod_{i<n}(k - 2i) / (2n)!``.

    For even ``k`` the series is finite and ``n_max`` defaults to ``k/2``;
    otherwise it defaults to 12.  ``tail_bound`` is the squared L2(gauss)
    norm of the truncated remainder.
    """
    even = float(k).is_integer() and int(k) % 2 == 0
    if n_max is None:
        n_max = int(k) // 2 if even else 12
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    coeffs = []
    prod = 1.0
    for n in range(1, n_max + 1):
        prod *= k - 2 * (n - 1)
        coeffs.append(prod / factorial(2 * n))
    coeffs = np.array(coeffs)
    norm_sq = gaussian_abs_moment(2 * k) / gaussian_abs_moment(k) ** 2 - 1.0
    captured = float(np.sum(coeffs**2 * np.array([factorial(2 * n) for n in range(1, n_max + 1)])))
    tail = max(norm_sq - captured, 0.0)
    if even and n_max >= int(k) // 2:
        tail = 0.0
    return HermiteSeries(k=float(k), coeffs=coeffs, n_max=n_max, tail_bound=tail)


# --- Fourier route ----------------------------------------------------------


def _fourier_integral(kernel: Kernel, p: float, x: float, b: float, c: float) -> float:
    """``(1/pi) int_0^inf Re[y^p exp(ixy) phi_hat(-by) phi_hat(cy)] dy``."""

    def body(y):
        y = np.atleast_1d(y)
        val = np.exp(1j * x * y) * kernel.fourier(-b * y) * kernel.fourier(c * y)
        return val.real

    def f_scalar(y):
        return float(body(y)[0])

    total = 0.0
    # near zero the factor y^p may be singular (p = 1 - 2h < 0)
    val, _ = integrate.quad(f_scalar, 0.0, 1.0, weight="alg", wvar=(p, 0.0), **_QUAD_OPTS)
    total += val
    edges = np.linspace(1.0, TAIL_START, 21)
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(lambda y: y**p * f_scalar(y), lo, hi, **_QUAD_OPTS)
        total += val
    total += _fourier_tail(kernel, p, x, b, c, TAIL_START)
    return total / pi


def _laurent(coef: np.ndarray, y: np.ndarray) -> np.ndarray:
    lam = np.zeros(np.shape(y), dtype=complex)
    iy = 1j * y
    for j in range(len(coef) - 1, -1, -1):
        lam = (lam + coef[j]) / iy
    return lam


def _fourier_tail(kernel: Kernel, p: float, x: float, b: float, c: float, start: float) -> float:
    """Integral over ``[start, inf)`` split into pure-frequency terms."""
    exp = kernel.endpoint_expansion
    groups: dict[float, list[tuple[np.ndarray, np.ndarray]]] = {}
    for e, ce in exp.items():
        for f, cf in exp.items():
            omega = x - b * e + c * f
            key = round(omega, 12)
            groups.setdefault(key, []).append((ce, cf))

    total = 0.0
    for omega, pairs in groups.items():

        def amp(y, pairs=pairs):
            y = np.atleast_1d(np.asarray(y, dtype=float))
            acc = np.zeros(y.shape, dtype=complex)
            for ce, cf in pairs:
                acc += _laurent(ce, -b * y) * _laurent(cf, c * y)
            return y**p * acc

        if abs(omega) < 1e-12:
            val, _ = integrate.quad(lambda y: float(amp(y).real[0]), start, np.inf, epsabs=1e-15, limit=400)
            total += val
            continue
        w = abs(omega)
        sgn = 1.0 if omega > 0 else -1.0
        re, _ = integrate.quad(lambda y: float(amp(y).real[0]), start, np.inf, weight="cos", wvar=w,
                               epsabs=1e-15, limlst=100)
        im, _ = integrate.quad(lambda y: float(amp(y).imag[0]), start, np.inf, weight="sin", wvar=w,
                               epsabs=1e-15, limlst=100)
        # Re[A e^{i omega y}] = Re A cos(omega y) - Im A sin(omega y)
        total += re - sgn * im
    return total


# --- time-domain route -----------------------------------------------------


def _poly_abs_power(poly: Polynomial, lo: float, hi: float, a0: float, a1: float, gam: float) -> float:
    """Exact ``int_lo^hi poly(v) |a0 + a1 v|^gam dv``."""
    # substitute u = a0 + a1 v
    pu = poly(Polynomial([-a0 / a1, 1.0 / a1])) / a1
    u_lo, u_hi = a0 + a1 * lo, a0 + a1 * hi

    def anti(u):
        au = abs(u)
        return sum(cn * u ** (n + 1) * au**gam / (n + gam + 1.0) for n, cn in enumerate(pu.coef))

    return anti(u_hi) - anti(u_lo)


def _q_direct(kernel: Kernel, order: int, h: float, x: float, b: float, c: float) -> float:
    pieces, atoms = kernel.derivative(order)
    g = 2.0 * h
    total = 0.0
    for s, ws in atoms:
        for r, wr in atoms:
            total += ws * wr * abs(x - b * s + c * r) ** g
    for s, ws in atoms:
        for pc in pieces:
            total += ws * _poly_abs_power(pc.poly, pc.lo, pc.hi, x - b * s, c, g)
    for r, wr in atoms:
        for pc in pieces:
            total += wr * _poly_abs_power(pc.poly, pc.lo, pc.hi, x + c * r, -b, g)
    for ps in pieces:
        for pr in pieces:

            def inner(s, ps=ps, pr=pr):
                return ps.poly(s) * _poly_abs_power(pr.poly, pr.lo, pr.hi, x - b * s, c, g)

            kinks = [(x + c * pr.lo) / b, (x + c * pr.hi) / b]
            pts = [k for k in kinks if ps.lo < k < ps.hi]
            val, _ = integrate.quad(inner, ps.lo, ps.hi, points=pts or None, epsabs=1e-15, epsrel=1e-13,
                                    limit=400)
            total += val
    return total


def _w_radius(kernel: Kernel, b: float, c: float) -> float:
    lo, hi = kernel.support
    return max(abs(b * lo - c * hi), abs(b * hi - c * lo))


@lru_cache(maxsize=256)
def _pair_moments(kname: str, order: int, b: float, c: float, j_max: int) -> np.ndarray:
    """``M_j = int int f(s) f(r) (b s - c r)^j`` for ``j <= j_max``."""
    kernel = builtin_kernel(kname)
    mu = np.array([kernel.moment(i, order) for i in range(j_max + 1)])
    out = np.zeros(j_max + 1)
    for j in range(j_max + 1):
        i = np.arange(j + 1)
        out[j] = np.sum(special.comb(j, i) * b**i * (-c) ** (j - i) * mu[i] * mu[j - i])
    return out


def _q_series(kernel: Kernel, order: int, h: float, x: np.ndarray, b: float, c: float, j_max: int = 60):
    """Binomial expansion of ``Q`` in powers of ``w/x``; valid for ``|x| > radius``."""
    x = np.asarray(x, dtype=float)
    g = 2.0 * h
    mom = _pair_moments(kernel.name, order, float(b), float(c), j_max)
    ax = np.abs(x)
    sgn = np.sign(x)
    # |x - w|^g = |x|^g (1 - w/x)^g ; for x < 0 flip w -> -w
    acc = np.zeros_like(ax)
    for j in range(j_max, -1, -1):
        term = special.binom(g, j) * (-1.0) ** j * mom[j] * sgn**j
        acc = acc / ax + term
    # acc = sum_j term_j * ax^(-(j)) computed by Horner in 1/ax
    return ax**g * acc


def _scaled(kernel: Kernel, order: int, scale: float):
    """Pieces and atoms of the law of ``scale * s`` under the signed measure ``f``."""
    pieces, atoms = kernel.derivative(order)
    out = []
    for pc in pieces:
        if not np.any(pc.poly.coef):
            continue
        poly = pc.poly(Polynomial([0.0, 1.0 / scale])) / abs(scale)
        lo, hi = sorted((scale * pc.lo, scale * pc.hi))
        out.append((lo, hi, poly))
    return out, [(scale * x, m) for x, m in atoms]


def _conv_pieces(p1, p2):
    """Exact convolution of two polynomial pieces, as a list of pieces."""
    (a1, b1, P), (a2, b2, R) = p1, p2
    # R(w - u) = sum_k r_k (w - u)^k = sum_{i,j} C[i, j] w^i u^j
    deg = R.degree()
    C = np.zeros((deg + 1, deg + 1))
    for k, rk in enumerate(R.coef):
        for j in range(k + 1):
            C[k - j, j] += rk * special.comb(k, j) * (-1.0) ** j
    antis = [(P * Polynomial(C[i])).integ() for i in range(deg + 1)]
    knots = sorted({a1 + a2, a1 + b2, b1 + a2, b1 + b2})
    w_poly = Polynomial([0.0, 1.0])
    out = []
    for lo, hi in zip(knots[:-1], knots[1:]):
        if hi - lo < 1e-14:
            continue
        mid = 0.5 * (lo + hi)
        # u ranges over [max(a1, w - b2), min(b1, w - a2)]
        L = Polynomial([a1]) if a1 >= mid - b2 else w_poly - b2
        U = Polynomial([b1]) if b1 <= mid - a2 else w_poly - a2
        poly = sum(w_poly**i * (A(U) - A(L)) for i, A in enumerate(antis))
        out.append((lo, hi, Polynomial(poly.coef)))
    return out


@lru_cache(maxsize=256)
def _pair_density(kname: str, order: int, b: float, c: float):
    """Pieces and atoms of the signed law of ``w = b s - c r``, ``s, r ~ f``."""
    kernel = builtin_kernel(kname)
    ps, as_ = _scaled(kernel, order, b)
    pr, ar = _scaled(kernel, order, -c)
    pieces = []
    atoms = [(x + y, m * n) for x, m in as_ for y, n in ar]
    for x, m in as_:
        pieces += [(lo + x, hi + x, m * poly(Polynomial([-x, 1.0]))) for lo, hi, poly in pr]
    for y, n in ar:
        pieces += [(lo + y, hi + y, n * poly(Polynomial([-y, 1.0]))) for lo, hi, poly in ps]
    for p1 in ps:
        for p2 in pr:
            pieces += _conv_pieces(p1, p2)
    return pieces, atoms


_SUB_WIDTH = 0.25
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(30)


def _q_exact(kernel: Kernel, order: int, h: float, x, b: float, c: float) -> np.ndarray:
    """``Q(x) = int F(w) |x - w|^2h dw`` with ``F`` the pair density.

    Pieces are cut to width <= 0.25.  Where ``x`` is within half a width of
    a piece the integral is done exactly (Taylor expansion of ``F`` at
    ``x``); elsewhere the integrand is analytic on the piece and 30-point
    Gauss-Legendre is accurate to rounding.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g = 2.0 * h
    pieces, atoms = _pair_density(kernel.name, order, float(b), float(c))
    out = np.zeros_like(x)
    for w, m in atoms:
        out += m * np.abs(x - w) ** g
    for lo0, hi0, poly in pieces:
        n_sub = max(1, int(np.ceil((hi0 - lo0) / _SUB_WIDTH - 1e-12)))
        edges = np.linspace(lo0, hi0, n_sub + 1)
        derivs = [poly.deriv(n) / factorial(n) for n in range(poly.degree() + 1)]
        for lo, hi in zip(edges[:-1], edges[1:]):
            half = 0.5 * (hi - lo)
            mid = lo + half
            near = np.abs(x - mid) < 2.0 * half
            if np.any(near):
                xn = x[near]
                acc = np.zeros_like(xn)
                # P(w) = sum_n q_n(x) v^n with v = w - x
                for n, dn in enumerate(derivs):
                    anti = lambda v: v ** (n + 1) * np.abs(v) ** g / (n + g + 1.0)
                    acc += dn(xn) * (anti(hi - xn) - anti(lo - xn))
                out[near] += acc
            if np.any(~near):
                xf = x[~near]
                nodes = mid + half * _GL_NODES
                vals = poly(nodes) * _GL_WEIGHTS * half
                out[~near] += np.abs(xf[:, None] - nodes[None, :]) ** g @ vals
    return out


def _q_time(kernel: Kernel, order: int, h: float, x, b: float, c: float) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    far = np.abs(x) > 2.0 * _w_radius(kernel, b, c)
    if np.any(far):
        out[far] = _q_series(kernel, order, h, x[far], b, c)
    if np.any(~far):
        out[~far] = _q_exact(kernel, order, h, x[~far], b, c)
    return out


# --- public constants -------------------------------------------------------


def spectral_variance(order: int, h: float, kernel: Kernel | str = "second_difference", *,
                      method: str = "fourier", verify: bool = True):
    """Variance of ``eps^(order-h) * d^order/dt^order b_eps(t)``.

    ``order=2`` gives ``sigma_2H^2`` (exponent ``3-2h`` in the Fourier
    integral), ``order=1`` gives the first-derivative analogue (exponent
    ``1-2h``).  With ``method="both"`` a pair ``(fourier, time_domain)`` is
    returned.  When ``verify`` is set both routes are evaluated and a
    relative disagreement above ``1e-5`` raises :class:`QuadratureError`.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if method not in ("fourier", "time_domain", "both"):
        raise ValueError(f"unknown method {method!r}")
    h = check_hurst(h)
    kernel = builtin_kernel(kernel)
    return _spectral_variance(order, h, kernel.name, method, verify)


@lru_cache(maxsize=4096)
def _spectral_variance(order, h, kname, method, verify):
    kernel = builtin_kernel(kname)
    p = (3.0 if order == 2 else 1.0) - 2.0 * h
    four = time = None
    if method in ("fourier", "both") or verify:
        four = _fourier_integral(kernel, p, 0.0, 1.0, 1.0)
    if method in ("time_domain", "both") or verify:
        time = -0.5 * v2h_sq(h) * float(_q_time(kernel, order, h, 0.0, 1.0, 1.0)[0])
    if verify and abs(four - time) > 1e-5 * abs(time):
        raise QuadratureError(f"spectral variance routes disagree: fourier={four!r}, time={time!r}")
    if method == "both":
        return four, time
    return four if method == "fourier" else time


def rho_H(x, b: float = 1.0, c: float = 1.0, h: float = 0.7, kernel: Kernel | str = "second_difference",
          *, method: str = "fourier"):
    """Lag correlation ``E[Z_{eps b}(eps x + u) Z_{eps c}(u)]``.

    ``method`` is ``"fourier"`` (oscillatory quadrature of the spectral
    formula) or ``"time_domain"``.  Accepts scalar or array ``x``.
    """
    h = check_hurst(h)
    kernel = builtin_kernel(kernel)
    if b <= 0 or c <= 0:
        raise ValueError("scales must be positive")
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    s2 = spectral_variance(2, h, kernel, verify=False)
    if method == "fourier":
        vals = np.array([_fourier_integral(kernel, 3.0 - 2.0 * h, float(xi), b, c) for xi in xs])
        vals *= (b * c) ** (2.0 - h) / s2
    elif method == "time_domain":
        vals = -0.5 * v2h_sq(h) * (b * c) ** (-h) * _q_time(kernel, 2, h, xs, b, c) / s2
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(vals[0]) if scalar else vals


def _asymptotic_rho_coef(h: float, b: float, c: float, s2: float) -> float:
    """``C`` in ``rho_H(x, b, c) ~ C |x|^(2h-4)`` (leading moment term, kernel independent)."""
    g = 2.0 * h
    m4 = 24.0 * b * b * c * c  # 6 * (int s^2 phi'')^2 * b^2 c^2, with int s^2 phi'' = 2
    d4 = g * (g - 1) * (g - 2) * (g - 3)
    return -0.5 * v2h_sq(h) * (b * c) ** (-h) * m4 / 24.0 * d4 / s2


@dataclass
class RhoTable:
    """``rho_H(., b, c)`` on a display grid plus quadrature nodes for its powers.

    ``nodes``/``weights`` integrate over ``[0, cutoff]`` (doubled by
    symmetry when ``b == c``) or ``[-cutoff, cutoff]``.
    """

    x: np.ndarray
    values: np.ndarray
    h: float
    b: float
    c: float
    kernel: str
    tail_coef: float
    nodes: np.ndarray = None
    weights: np.ndarray = None
    node_values: np.ndarray = None

    def power_integral(self, n: int) -> tuple[float, float]:
        """``int rho^n dx`` over the real line and the analytic tail added beyond the cutoff."""
        body = float(np.dot(self.weights, self.node_values**n))
        if self.b == self.c:
            body *= 2.0
        X = float(self.cutoff)
        q = (2.0 * self.h - 4.0) * n
        tail = 2.0 * self.tail_coef**n * X ** (q + 1.0) / (-q - 1.0)
        return body + tail, tail

    @property
    def cutoff(self) -> float:
        return float(abs(self.x[-1]))


_GRADE, _GRADE_LEVELS = 0.15, 12
_GL20 = np.polynomial.legendre.leggauss(20)


def _graded_rule(points) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on each gap, geometrically refined toward both ends.

    ``rho`` behaves like ``|x - p|^(2h)`` (or smoother) at the breakpoints
    ``p``; grading makes the rule converge at a geometric rate there.
    """
    frac = [0.5 * _GRADE**k for k in range(_GRADE_LEVELS, 0, -1)]
    unit = np.array([0.0] + frac + [0.5] + [1.0 - f for f in reversed(frac)] + [1.0])
    t, w = _GL20
    nodes, weights = [], []
    for a, b in zip(points[:-1], points[1:]):
        e = a + (b - a) * unit
        half = 0.5 * np.diff(e)
        mid = 0.5 * (e[1:] + e[:-1])
        nodes.append((mid[:, None] + half[:, None] * t[None, :]).ravel())
        weights.append((half[:, None] * w[None, :]).ravel())
    return np.concatenate(nodes), np.concatenate(weights)


def _geometric_rule(a: float, b: float, ratio: float = 1.25) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on geometric panels of ``[a, b]`` (``0 < a < b``), for power-law decay."""
    n = max(1, int(np.ceil(np.log(b / a) / np.log(ratio))))
    e = a * (b / a) ** (np.arange(n + 1) / n)
    t, w = _GL20
    half = 0.5 * np.diff(e)
    mid = 0.5 * (e[1:] + e[:-1])
    return (mid[:, None] + half[:, None] * t[None, :]).ravel(), (half[:, None] * w[None, :]).ravel()


def _rho_rule(kname: str, b: float, c: float, cutoff: float) -> tuple[np.ndarray, np.ndarray]:
    pieces, atoms = _pair_density(kname, 2, b, c)
    brk = {w for w, _ in atoms} | {p for lo, hi, _ in pieces for p in (lo, hi)}
    # rho(x) depends on x - w for w in the support of the pair law
    radius = max(abs(p) for p in brk) + 1.0
    radius = min(radius, cutoff)
    if b == c:
        pts = sorted({0.0, radius} | {p for p in brk if 0.0 < p < radius})
        n1, w1 = _graded_rule(pts)
        n2, w2 = _geometric_rule(radius, cutoff) if cutoff > radius else (np.empty(0), np.empty(0))
        return np.concatenate([n1, n2]), np.concatenate([w1, w2])
    pts = sorted({-radius, radius} | {p for p in brk if -radius < p < radius})
    n1, w1 = _graded_rule(pts)
    if cutoff > radius:
        n2, w2 = _geometric_rule(radius, cutoff)
        return np.concatenate([-n2[::-1], n1, n2]), np.concatenate([w2[::-1], w1, w2])
    return n1, w1


def rho_table(h: float, kernel: Kernel | str = "second_difference", b: float = 1.0, c: float = 1.0,
              step: float = 0.01, cutoff: float = 200.0) -> RhoTable:
    """Sample ``rho_H(., b, c)`` on a uniform grid (half line when ``b == c``) and on quadrature nodes."""
    kernel = builtin_kernel(kernel)
    return _rho_table(check_hurst(h), kernel.name, float(b), float(c), float(step), float(cutoff))


@lru_cache(maxsize=256)
def _rho_table(h, kname, b, c, step, cutoff):
    kernel = builtin_kernel(kname)
    n = int(round(cutoff / step))
    if b == c:
        x = step * np.arange(0, n + 1)
    else:
        x = step * np.arange(-n, n + 1)
    s2 = spectral_variance(2, h, kernel, verify=False)
    scale = -0.5 * v2h_sq(h) * (b * c) ** (-h) / s2
    vals = scale * _q_time(kernel, 2, h, x, b, c)
    nodes, weights = _rho_rule(kname, b, c, cutoff)
    node_vals = scale * _q_time(kernel, 2, h, nodes, b, c)
    return RhoTable(x=x, values=vals, h=h, b=b, c=c, kernel=kname, tail_coef=_asymptotic_rho_coef(h, b, c, s2),
                    nodes=nodes, weights=weights, node_values=node_vals)


def sigma_g_sq(series: HermiteSeries, h: float, kernel: Kernel | str = "second_difference",
               x_cutoff: float = 200.0, *, full_output: bool = False):
    """``sum_n g_{2n}^2 (2n)! int rho_H^{2n}(x) dx`` for the truncated series.

    With ``full_output`` a dict with the truncation and tail error estimates
    is returned as well.
    """
    val, info = _sigma_g_cached(series.k, series.n_max, check_hurst(h), builtin_kernel(kernel).name,
                                float(x_cutoff))
    return (val, dict(info)) if full_output else val


@lru_cache(maxsize=512)
def _sigma_g_cached(k, n_max, h, kname, x_cutoff):
    return _rho_g_sum(g_coeffs(k, n_max), h, kname, 1.0, 1.0, x_cutoff)


def _rho_g_sum(series, h, kernel, b, c, x_cutoff):
    table = rho_table(h, kernel, b, c, cutoff=x_cutoff)
    weights = series.weights()
    total = 0.0
    tail_total = 0.0
    last = 0.0
    for n, wgt in enumerate(weights, start=1):
        if wgt == 0.0:
            continue
        integral, tail = table.power_integral(2 * n)
        total += wgt * integral
        tail_total += wgt * abs(tail)
        last = integral
    if abs(tail_total) > 1e-6 * max(abs(total), 1e-300):
        raise QuadratureError(f"x_cutoff={x_cutoff} too small: tail estimate {tail_total:.3g}")
    # int rho^{2n} decreases in n, so the omitted chaos terms are bounded by
    # tail_bound * int rho^{2 n_max}
    trunc = series.tail_bound * abs(last)
    return total, {"truncation_error": trunc, "tail_correction": tail_total}


def rho_g(b: float, c: float, series: HermiteSeries, h: float, kernel: Kernel | str = "second_difference",
          x_cutoff: float = 200.0) -> float:
    """Limit covariance of ``S_g(eps b)`` and ``S_g(eps c)``."""
    if b <= 0 or c <= 0:
        raise ValueError("scales must be positive")
    key = _cache_key("rho_g", h=h, kernel=builtin_kernel(kernel).name, k=series.k, n_max=series.n_max,
                     b=b, c=c, cutoff=x_cutoff)
    hit = DiskCache.default().get(key)
    if hit is not None:
        return hit
    val, _ = _rho_g_sum(series, h, kernel, float(b), float(c), x_cutoff)
    val /= sqrt(b * c)
    DiskCache.default().put(key, val)
    return val


def sigma_gm_sq(c_list, d_list, series: HermiteSeries, h: float, kernel: Kernel | str = "second_difference") -> float:
    """``sum_ij d_i d_j rho_g(c_i, c_j)``."""
    c_list = [float(v) for v in c_list]
    d = np.asarray(d_list, dtype=float)
    if len(c_list) != len(d):
        raise ValueError("c_list and d_list differ in length")
    if np.all(d == 0):
        return 0.0
    R = np.empty((len(c_list), len(c_list)))
    for i, ci in enumerate(c_list):
        for j, cj in enumerate(c_list):
            if j < i:
                R[i, j] = R[j, i]
            else:
                R[i, j] = rho_g(ci, cj, series, h, kernel)
    val = float(d @ R @ d)
    if val < -1e-10:
        raise QuadratureError(f"negative variance {val!r}")
    return max(val, 0.0)


def regression_variance(k: float, c_list, h: float, kernel: Kernel | str = "second_difference") -> float:
    """Limit variance of ``(H_hat_k - H) / sqrt(eps)`` for scales ``c_list``."""
    c = np.asarray(c_list, dtype=float)
    y = np.log(c) - np.mean(np.log(c))
    z = y / np.sum(y * y)
    return sigma_gm_sq(c, np.sqrt(c) * z / k, g_coeffs(k), h, kernel)


# --- cache -------------------------------------------------------------------


# bump when a numerical rule changes so stale cached values are not reused
CACHE_VERSION = 2


def _cache_key(kind: str, **params) -> str:
    blob = json.dumps({"kind": kind, "version": CACHE_VERSION, **params}, sort_keys=True, default=float)
    return hashlib.sha256(blob.encode()).hexdigest()


class DiskCache:
    """JSON file per key; writes go through a temp file and ``os.replace``."""

    _default: "DiskCache | None" = None

    def __init__(self, root: Path | None):
        self.root = root
        self._mem: dict[str, float] = {}

    @classmethod
    def default(cls) -> "DiskCache":
        if cls._default is None:
            env = os.environ.get("FBMSTAT_CACHE")
            if env == "off":
                root = None
            else:
                root = Path(env) if env else Path.home() / ".cache" / "fbmstat"
            cls._default = cls(root)
        return cls._default

    def get(self, key: str):
        if key in self._mem:
            return self._mem[key]
        if self.root is None:
            return None
        path = self.root / f"{key}.json"
        try:
            val = json.loads(path.read_text())["value"]
        except (OSError, ValueError, KeyError):
            return None
        self._mem[key] = val
        return val

    def put(self, key: str, value: float) -> None:
        self._mem[key] = value
        if self.root is None:
            return
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
            with os.fdopen(fd, "w") as fh:
                json.dump({"value": value}, fh)
            os.replace(tmp, self.root / f"{key}.json")
        except OSError as exc:  # read-only home etc.
            log.debug("constants cache write failed: %s", exc)


# --- bundle ------------------------------------------------------------------


@dataclass
class SpectralConstants:
    h: float
    kernel: str
    v2h_sq: float
    sigma2h_sq: float
    sigma_tilde2h_sq: float
    rho_x: np.ndarray = field(repr=False)
    rho_values: np.ndarray = field(repr=False)
    method: str = "both"

    def rows(self, k_list=(2,), scales=(1.0,)) -> list[tuple[str, float]]:
        out = [("v2h_sq", self.v2h_sq), ("sigma2h_sq", self.sigma2h_sq),
               ("sigma_tilde2h_sq", self.sigma_tilde2h_sq)]
        for k in k_list:
            out.append((f"sigma_g{k:g}_sq", sigma_g_sq(g_coeffs(k), self.h, self.kernel)))
            if len(scales) >= 2:
                out.append((f"regression_var_k{k:g}", regression_variance(k, scales, self.h, self.kernel)))
        return out


def spectral_constants(h: float, kernel: Kernel | str = "second_difference") -> SpectralConstants:
    """All single-scale constants for ``(h, kernel)``, both routes cross-checked."""
    kernel = builtin_kernel(kernel)
    s2 = spectral_variance(2, h, kernel, verify=True)
    s1 = spectral_variance(1, h, kernel, verify=True)
    table = rho_table(h, kernel)
    return SpectralConstants(h=h, kernel=kernel.name, v2h_sq=v2h_sq(h), sigma2h_sq=s2, sigma_tilde2h_sq=s1,
                             rho_x=table.x, rho_values=table.values)
