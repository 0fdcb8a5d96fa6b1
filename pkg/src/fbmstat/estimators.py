"""Estimators of ``H`` and ``sigma`` from the smoothed second derivative.

Notation: ``M_k(eps) = int_0^1 |X''_eps|^k du`` (additive family) or
``int_0^1 |X''_eps / X_eps|^k du`` (multiplicative family), and
``Z^X_eps = eps^(2-h) X''_eps / sigma_2H`` (divided by ``X_eps`` in the
multiplicative family).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import fsum, log, pi, sqrt

import numpy as np

from .constants import gaussian_abs_moment, spectral_variance
from .fbm_engine import check_hurst
from .kernels import SmoothedProcess, smooth

__all__ = [
    "ScaleSet",
    "RegressionEstimate",
    "DegeneratePathError",
    "z_x_process",
    "m_k",
    "a_k",
    "regress_log_moments",
    "estimate_H_sigma",
    "estimate_sigma_known_H",
    "functional_statistic",
    "crossing_count",
    "banach_check",
    "pointwise_sigma",
    "s_g_statistic",
    "remainder_sup",
]

FAMILY_NAMES = ("additive", "multiplicative")
POSITIVITY_GUARD = 1e-8


class DegeneratePathError(ValueError):
    pass


def _family(family) -> str:
    if hasattr(family, "multiplicative"):
        return "multiplicative" if family.multiplicative else "additive"
    if family not in FAMILY_NAMES:
        raise ValueError(f"family must be one of {FAMILY_NAMES}, got {family!r}")
    return family


def _sigma2h_sq(h: float, kernel: str) -> float:
    # exact time-domain integral, cheap enough to redo for every estimated h
    return spectral_variance(2, h, kernel or "second_difference", method="time_domain", verify=False)


@dataclass
class ScaleSet:
    """Scales ``h_i = eps * c_i`` with centred log-weights ``y`` and ``z = y / sum(y^2)``."""

    eps: float
    c_list: tuple[float, ...]

    def __post_init__(self):
        self.c_list = tuple(float(c) for c in self.c_list)
        if self.eps <= 0 or any(c <= 0 for c in self.c_list):
            raise ValueError("eps and scales must be positive")
        if len(self.c_list) < 2 or len(set(self.c_list)) < 2:
            raise ValueError("need at least two distinct scales")

    @property
    def h_list(self) -> np.ndarray:
        return self.eps * np.asarray(self.c_list)

    @property
    def y(self) -> np.ndarray:
        lc = np.log(self.c_list)
        return lc - lc.mean()

    @property
    def z(self) -> np.ndarray:
        y = self.y
        return y / np.sum(y * y)


@dataclass
class RegressionEstimate:
    k: float
    h_hat: float
    b_hat: float
    sigma_hat: float
    per_scale_logM: np.ndarray
    residuals: np.ndarray
    sigma2h_hat_sq: float
    flags: list[str] = field(default_factory=list)

    def sigma_hat_pow_k(self) -> float:
        """``exp(B_hat) / (sigma_2H_hat^k E|N|^k)``."""
        return float(np.exp(self.b_hat) / (self.sigma2h_hat_sq ** (self.k / 2.0) * gaussian_abs_moment(self.k)))

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "h_hat": self.h_hat,
            "b_hat": self.b_hat,
            "sigma_hat": self.sigma_hat,
            "sigma2h_hat_sq": self.sigma2h_hat_sq,
            "per_scale_logM": [float(v) for v in self.per_scale_logM],
            "residuals": [float(v) for v in self.residuals],
            "flags": list(self.flags),
        }


# --- pointwise quantities ----------------------------------------------------


def _ratio(smoothed: SmoothedProcess, family: str) -> np.ndarray:
    dd = smoothed.require(2)
    if family == "additive":
        return dd
    x = smoothed.require(0)
    ax = np.abs(x)
    if ax.min() <= POSITIVITY_GUARD * ax.max():
        raise DegeneratePathError("X_eps comes too close to 0 on [0, 1]; the multiplicative statistics need "
                                  "X_eps bounded away from 0")
    return dd / x


def z_x_process(smoothed: SmoothedProcess, h: float, family="additive", sigma2h_sq: float | None = None):
    """``Z^X_eps`` on the inner grid."""
    family = _family(family)
    if sigma2h_sq is None:
        sigma2h_sq = _sigma2h_sq(h, smoothed.kernel)
    return smoothed.eps ** (2.0 - h) * _ratio(smoothed, family) / sqrt(sigma2h_sq)


def m_k(smoothed: SmoothedProcess, k: float, family="additive") -> float:
    """``M_k(eps)`` by the trapezoid rule."""
    return smoothed.integral(np.abs(_ratio(smoothed, _family(family))) ** k)


def a_k(smoothed: SmoothedProcess, k: float, sigma: float, h: float, family="additive",
        sigma2h_sq: float | None = None) -> float:
    """``int |Z^X|^k / (sigma^k E|N|^k) - 1``."""
    z = z_x_process(smoothed, h, family, sigma2h_sq)
    return smoothed.integral(np.abs(z) ** k) / (sigma**k * gaussian_abs_moment(k)) - 1.0


# --- regression ----------------------------------------------------------------


def regress_log_moments(log_m, scales: ScaleSet, k: float) -> tuple[float, float, np.ndarray]:
    """``(H_hat, B_hat, residuals)`` from ``log M_k`` at the scales ``h_i``.

    ``k (H_hat - 2) = sum z_i log M_i`` and
    ``B_hat = mean(log M) - k (H_hat - 2) mean(log h)``.
    """
    log_m = np.asarray(log_m, dtype=float)
    if log_m.shape != (len(scales.c_list),):
        raise ValueError("one log M_k value per scale is required")
    # centre both sides and use exact sums: the intercept is an extrapolation to log h = 0
    log_h = np.log(scales.h_list)
    l_bar = fsum(log_h) / len(log_h)
    m_bar = fsum(log_m) / len(log_m)
    dy = log_h - l_bar
    slope = fsum(dy * (log_m - m_bar)) / fsum(dy * dy)
    b_hat = m_bar - slope * l_bar
    resid = log_m - (slope * log_h + b_hat)
    return slope / k + 2.0, b_hat, resid


def estimate_H_sigma(process, kernel, k: float, scales: ScaleSet, family="additive") -> RegressionEstimate:
    """Joint regression estimate of ``(H, sigma)`` from ``M_k`` at the scales ``eps c_i``.

    ``sigma_2H`` in the ``sigma`` step is re-evaluated at the estimated
    ``H``.
    """
    family = _family(family)
    log_m = []
    for hi in scales.h_list:
        mk = m_k(smooth(process, kernel, float(hi), orders=(0, 2) if family == "multiplicative" else (2,)), k,
                 family)
        if not np.isfinite(mk) or mk <= 0.0:
            raise DegeneratePathError(f"M_k vanishes at scale {hi:g}")
        log_m.append(log(mk))
    h_hat, b_hat, resid = regress_log_moments(log_m, scales, k)
    flags = []
    if not 0.0 < h_hat < 1.0:
        raise DegeneratePathError(f"estimated H = {h_hat:.4g} outside (0, 1)")
    if not 0.5 < h_hat < 1.0:
        flags.append("h_hat_outside_half_one")
        warnings.warn(f"estimated H = {h_hat:.4g} outside (1/2, 1)", RuntimeWarning, stacklevel=2)
    kname = getattr(kernel, "name", kernel)
    s2 = _sigma2h_sq(h_hat, kname)
    est = RegressionEstimate(k=float(k), h_hat=h_hat, b_hat=b_hat, sigma_hat=np.nan, per_scale_logM=np.array(log_m),
                             residuals=resid, sigma2h_hat_sq=s2, flags=flags)
    est.sigma_hat = est.sigma_hat_pow_k() ** (1.0 / k)
    return est


def estimate_sigma_known_H(process, kernel, k: float, eps: float, h: float, family="additive") -> float:
    """``(int |Z^X_eps|^k)^(1/k) / E|N|^k^(1/k)`` with ``H`` known."""
    h = check_hurst(h, estimator=True)
    family = _family(family)
    sm = smooth(process, kernel, eps, orders=(0, 2) if family == "multiplicative" else (2,))
    z = z_x_process(sm, h, family)
    return (sm.integral(np.abs(z) ** k) / gaussian_abs_moment(k)) ** (1.0 / k)


def s_g_statistic(smoothed_b: SmoothedProcess, k: float, h: float, sigma2h_sq: float | None = None) -> float:
    """``eps^(-1/2) int_0^1 g_k(Z_eps) du`` for a smoothed raw fBm path."""
    z = z_x_process(smoothed_b, h, "additive", sigma2h_sq)
    g = np.abs(z) ** k / gaussian_abs_moment(k) - 1.0
    return smoothed_b.integral(g) / sqrt(smoothed_b.eps)


# --- functional statistics ---------------------------------------------------


def _apply_h(h_fn, x):
    if h_fn is None:
        return np.ones_like(x)
    return np.broadcast_to(np.asarray(h_fn(x), dtype=float), x.shape)


def functional_statistic(order: int, h_fn, k: float, smoothed: SmoothedProcess, h: float) -> float:
    """Order 2: ``(1/E|N|^k) int h(X_eps) |eps^(2-H) X''_eps / sigma_2H|^k``.

    Order 1: ``sqrt(pi/2) (eps^(1-H) / sigma~_2H) int h(X_eps) |X'_eps|``
    (``k`` is ignored).  ``h_fn=None`` means ``h = 1``.
    """
    kname = smoothed.kernel or "second_difference"
    x = smoothed.require(0)
    w = _apply_h(h_fn, x)
    eps = smoothed.eps
    if order == 2:
        s2 = _sigma2h_sq(h, kname)
        z = eps ** (2.0 - h) * smoothed.require(2) / sqrt(s2)
        return smoothed.integral(w * np.abs(z) ** k) / gaussian_abs_moment(k)
    if order == 1:
        s1 = spectral_variance(1, h, kname, method="time_domain", verify=False)
        return sqrt(pi / 2.0) * eps ** (1.0 - h) / sqrt(s1) * smoothed.integral(w * np.abs(smoothed.require(1)))
    raise ValueError("order must be 1 or 2")


def crossing_count(smoothed: SmoothedProcess | np.ndarray, level) -> np.ndarray | int:
    """Number of sign changes of ``X_eps - level`` on the inner grid.

    Values equal to the level count as above it, so a piecewise-linear path
    crosses level ``L`` on a segment iff ``L`` lies in ``(min, max]`` of
    its end values.  ``level`` may be an array.
    """
    x = smoothed.require(0) if isinstance(smoothed, SmoothedProcess) else np.asarray(smoothed, dtype=float)
    levels = np.atleast_1d(np.asarray(level, dtype=float))
    order = np.argsort(levels)
    sorted_lv = levels[order]
    lo = np.minimum(x[:-1], x[1:])
    hi = np.maximum(x[:-1], x[1:])
    i0 = np.searchsorted(sorted_lv, lo, side="right")
    i1 = np.searchsorted(sorted_lv, hi, side="right")
    diff = np.zeros(len(sorted_lv) + 1, dtype=np.int64)
    np.add.at(diff, i0, 1)
    np.add.at(diff, i1, -1)
    counts_sorted = np.cumsum(diff)[:-1]
    counts = np.empty_like(counts_sorted)
    counts[order] = counts_sorted
    return int(counts[0]) if np.ndim(level) == 0 else counts


def banach_check(h_fn, smoothed: SmoothedProcess, n_levels: int = 2000) -> tuple[float, float]:
    """``(int h(x) N(x) dx, int_0^1 h(X_eps) |X'_eps| du)``.

    The left side uses a midpoint rule over ``n_levels`` cells spanning the
    range of ``X_eps``.
    """
    x = smoothed.require(0)
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        return 0.0, smoothed.integral(_apply_h(h_fn, x) * np.abs(smoothed.require(1)))
    step = (hi - lo) / n_levels
    mids = lo + step * (np.arange(n_levels) + 0.5)
    lhs = float(np.sum(_apply_h(h_fn, mids) * crossing_count(x, mids)) * step)
    rhs = smoothed.integral(_apply_h(h_fn, x) * np.abs(smoothed.require(1)))
    return lhs, rhs


@dataclass
class PointwiseSigma:
    x: np.ndarray
    sigma: np.ndarray
    mass: np.ndarray
    mask: np.ndarray  # True where the occupation mass is too small


def pointwise_sigma(smoothed: SmoothedProcess, k: float, h: float, x_grid, bandwidth: float,
                    min_mass: float = 1e-3) -> PointwiseSigma:
    """Localised ``sigma(x)`` from the order-2 functional with a triangular window.

    ``sigma_hat(x)^k = F(K_b(. - x)) / int K_b(X_eps - x)``, where ``F`` is
    the order-2 functional statistic and ``K_b`` has half-width ``b``.
    Points whose occupation mass is below ``min_mass`` are masked (NaN).
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    x_grid = np.asarray(x_grid, dtype=float)
    xe = smoothed.require(0)
    s2 = _sigma2h_sq(h, smoothed.kernel or "second_difference")
    zk = np.abs(smoothed.eps ** (2.0 - h) * smoothed.require(2) / sqrt(s2)) ** k / gaussian_abs_moment(k)
    sig = np.full(len(x_grid), np.nan)
    mass = np.zeros(len(x_grid))
    for i, x0 in enumerate(x_grid):
        w = np.clip(1.0 - np.abs(xe - x0) / bandwidth, 0.0, None)
        mass[i] = smoothed.integral(w)
        if mass[i] >= min_mass:
            sig[i] = (smoothed.integral(w * zk) / mass[i]) ** (1.0 / k)
    mask = ~(mass >= min_mass)
    return PointwiseSigma(x=x_grid, sigma=sig, mass=mass, mask=mask)


def remainder_sup(smoothed_x: SmoothedProcess, smoothed_b: SmoothedProcess, sigma: float, h: float) -> float:
    """``sup_{eps <= t <= 1} eps^(2-H) |X''_eps - sigma X_eps b''_eps|`` (geometric model)."""
    eps = smoothed_x.eps
    keep = smoothed_x.t >= eps - 1e-12
    r = smoothed_x.require(2) - sigma * smoothed_x.require(0) * smoothed_b.require(2)
    return float(eps ** (2.0 - h) * np.max(np.abs(r[keep])))


def k_variance_weights(k: float, scales: ScaleSet) -> np.ndarray:
    """Weights ``d_i = sqrt(c_i) z_i / k`` of the limit variance of ``(H_hat - H) / sqrt(eps)``."""
    return np.sqrt(np.asarray(scales.c_list)) * scales.z / k
