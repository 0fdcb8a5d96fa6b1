"""Smoothing kernels and convolution of sampled paths.

A kernel is stored as a piecewise polynomial density on a compact support.
Differentiating it produces polynomial pieces plus point masses (atoms) at
the jumps of the previous derivative; the second-difference kernel, for
instance, has a second derivative made only of three atoms.  Every
downstream quantity (grid weights, exact moments, Fourier transform,
time-domain covariance integrals) is built from this one representation.

Fourier convention: ``phi_hat(y) = int exp(i*y*t) phi(t) dt``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import factorial
from typing import Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate

__all__ = [
    "Piece",
    "Kernel",
    "SmoothedProcess",
    "builtin_kernel",
    "kernel_names",
    "grid_weights",
    "smooth",
    "z_process",
]

_JUMP_TOL = 1e-13


@dataclass(frozen=True)
class Piece:
    lo: float
    hi: float
    poly: Polynomial


def _eval_pieces(pieces: Sequence[Piece], t) -> np.ndarray:
    """Evaluate a piecewise polynomial; averages one-sided values at breakpoints."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for pc in pieces:
        inside = (t > pc.lo) & (t < pc.hi)
        edge = (t == pc.lo) | (t == pc.hi)
        out = out + np.where(inside, pc.poly(t), 0.0) + np.where(edge, 0.5 * pc.poly(t), 0.0)
    return out


def _one_sided(pieces: Sequence[Piece], x: float, side: str) -> float:
    for pc in pieces:
        if side == "right" and pc.lo <= x < pc.hi:
            return float(pc.poly(x))
        if side == "left" and pc.lo < x <= pc.hi:
            return float(pc.poly(x))
    return 0.0


@dataclass(frozen=True)
class Kernel:
    """A compactly supported density ``phi`` given as polynomial pieces.

    Parameters
    ----------
    name : str
        Identifier used on the command line.
    pieces : tuple of Piece
        Contiguous pieces covering the support.
    is_c2_density : bool
        Whether ``phi`` is twice continuously differentiable.
    """

    name: str
    pieces: tuple[Piece, ...]
    is_c2_density: bool
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def support(self) -> tuple[float, float]:
        return self.pieces[0].lo, self.pieces[-1].hi

    @cached_property
    def breakpoints(self) -> tuple[float, ...]:
        pts = {pc.lo for pc in self.pieces} | {pc.hi for pc in self.pieces}
        return tuple(sorted(pts))

    def derivative(self, order: int) -> tuple[tuple[Piece, ...], tuple[tuple[float, float], ...]]:
        """Pieces and atoms ``(position, mass)`` of the ``order``-th derivative."""
        if order in self._cache:
            return self._cache[order]
        if order == 0:
            res = (self.pieces, ())
        else:
            pieces, atoms = self.derivative(order - 1)
            if atoms:
                raise ValueError(f"kernel {self.name!r} has no derivative of order {order}")
            new_atoms = []
            for x in self.breakpoints:
                jump = _one_sided(pieces, x, "right") - _one_sided(pieces, x, "left")
                if abs(jump) > _JUMP_TOL:
                    new_atoms.append((x, jump))
            new_pieces = tuple(Piece(pc.lo, pc.hi, pc.poly.deriv()) for pc in pieces)
            res = (new_pieces, tuple(new_atoms))
        self._cache[order] = res
        return res

    def eval(self, t):
        return _eval_pieces(self.pieces, t)

    def eval_d1(self, t):
        return _eval_pieces(self.derivative(1)[0], t)

    def eval_d2(self, t):
        """Regular part of the second derivative (atoms, if any, are not included)."""
        return _eval_pieces(self.derivative(2)[0], t)

    def moment(self, j: int, order: int = 0) -> float:
        """Exact ``int t**j phi^(order)(t) dt``, atoms included."""
        pieces, atoms = self.derivative(order)
        mono = Polynomial.basis(j)
        total = 0.0
        for pc in pieces:
            anti = (pc.poly * mono).integ()
            total += anti(pc.hi) - anti(pc.lo)
        for x, w in atoms:
            total += w * x**j
        return float(total)

    # --- Fourier transform -------------------------------------------------

    @cached_property
    def endpoint_expansion(self) -> dict[float, np.ndarray]:
        """Coefficients ``c[e][j]`` with ``phi_hat(y) = sum_e exp(i e y) sum_j c[e][j] (i y)^-(j+1)``.

        Obtained by repeated integration by parts on each polynomial piece.
        """
        coeffs: dict[float, np.ndarray] = {}
        deg = max(pc.poly.degree() for pc in self.pieces)
        for pc in self.pieces:
            d = pc.poly
            for j in range(deg + 1):
                sgn = (-1.0) ** j
                for e, s in ((pc.hi, 1.0), (pc.lo, -1.0)):
                    arr = coeffs.setdefault(e, np.zeros(deg + 1))
                    arr[j] += s * sgn * d(e)
                d = d.deriv()
        return {e: c for e, c in coeffs.items() if np.any(np.abs(c) > _JUMP_TOL)}

    @cached_property
    def _taylor_moments(self) -> np.ndarray:
        return np.array([self.moment(n) / factorial(n) for n in range(80)])

    @cached_property
    def _radius(self) -> float:
        lo, hi = self.support
        return max(abs(lo), abs(hi))

    def fourier(self, y):
        """Closed-form ``phi_hat(y)``: Taylor series near 0, by-parts expansion elsewhere."""
        y = np.asarray(y, dtype=float)
        out = np.empty(y.shape, dtype=complex)
        small = np.abs(y) * self._radius < 3.0
        if np.any(small):
            ys = y[small]
            acc = np.zeros(ys.shape, dtype=complex)
            for n in range(len(self._taylor_moments) - 1, -1, -1):
                acc = acc * (1j * ys) + self._taylor_moments[n]
            out[small] = acc
        if np.any(~small):
            yl = y[~small]
            out[~small] = self._fourier_tail_terms(yl)
        return out

    def _fourier_tail_terms(self, y: np.ndarray) -> np.ndarray:
        acc = np.zeros(y.shape, dtype=complex)
        iy = 1j * y
        for e, c in self.endpoint_expansion.items():
            lam = np.zeros(y.shape, dtype=complex)
            for j in range(len(c) - 1, -1, -1):
                lam = (lam + c[j]) / iy
            acc += np.exp(1j * e * y) * lam
        return acc

    def fourier_quad(self, y: float) -> complex:
        """``phi_hat(y)`` by adaptive quadrature, independent of the closed form."""
        re = im = 0.0
        for pc in self.pieces:
            re += integrate.quad(lambda t: pc.poly(t) * np.cos(y * t), pc.lo, pc.hi,
                                 epsabs=1e-14, epsrel=1e-13, limit=200)[0]
            im += integrate.quad(lambda t: pc.poly(t) * np.sin(y * t), pc.lo, pc.hi,
                                 epsabs=1e-14, epsrel=1e-13, limit=200)[0]
        return complex(re, im)


def _poly_kernel(name: str, coef: Sequence[float], scale: float, c2: bool) -> Kernel:
    return Kernel(name, (Piece(-1.0, 1.0, Polynomial(coef) * scale),), is_c2_density=c2)


def _second_difference() -> Kernel:
    # triangular hat 1 - |t + 1| on [-2, 0], i.e. 1_[-1,0] * 1_[-1,0]
    return Kernel(
        "second_difference",
        (Piece(-2.0, -1.0, Polynomial([2.0, 1.0])), Piece(-1.0, 0.0, Polynomial([0.0, -1.0]))),
        is_c2_density=False,
    )


_BUILTINS = {
    "second_difference": _second_difference,
    # triweight (35/32)(1 - t^2)^3: C^2 on the real line
    "c2_bump": lambda: _poly_kernel("c2_bump", [1.0, 0.0, -3.0, 0.0, 3.0, 0.0, -1.0], 35.0 / 32.0, True),
    # biweight (15/16)(1 - t^2)^2: C^1 only, second derivative jumps at +-1
    "quartic_bump": lambda: _poly_kernel("quartic_bump", [1.0, 0.0, -2.0, 0.0, 1.0], 15.0 / 16.0, False),
}
_INSTANCES: dict[str, Kernel] = {}


def kernel_names() -> tuple[str, ...]:
    return tuple(_BUILTINS)


def builtin_kernel(name: str) -> Kernel:
    """Return the built-in kernel called ``name`` (instances are shared)."""
    if isinstance(name, Kernel):
        return name
    if name not in _BUILTINS:
        raise ValueError(f"unknown kernel {name!r}; choose from {', '.join(_BUILTINS)}")
    if name not in _INSTANCES:
        _INSTANCES[name] = _BUILTINS[name]()
    return _INSTANCES[name]


# --- grid convolution ------------------------------------------------------


def grid_weights(kernel: Kernel, order: int, m: int) -> tuple[int, np.ndarray]:
    """Weights ``w_q`` at nodes ``s_q = q/m`` approximating ``int f(s) X(t - eps s) ds``.

    Returns ``(q_min, w)`` with ``w[j]`` the weight of node ``q_min + j``.
    Atoms are placed exactly; polynomial pieces use the trapezoid rule, then
    the weights are corrected (least-norm) so that the discrete moments of
    order ``0..max(order, 1)`` equal the exact ones.  This keeps affine paths
    exactly in the kernel's null space.
    """
    pieces, atoms = kernel.derivative(order)
    lo, hi = kernel.support
    q_min, q_max = int(round(lo * m)), int(round(hi * m))
    if not (np.isclose(q_min, lo * m) and np.isclose(q_max, hi * m)):
        raise ValueError("kernel support must lie on the node lattice")
    s = np.arange(q_min, q_max + 1) / m
    w = np.zeros(len(s))
    interior = np.zeros(len(s), dtype=bool)
    for pc in pieces:
        a, b = int(round(pc.lo * m)) - q_min, int(round(pc.hi * m)) - q_min
        vals = pc.poly(s[a : b + 1]) / m
        vals[0] *= 0.5
        vals[-1] *= 0.5
        w[a : b + 1] += vals
        interior[a + 1 : b] = True
    for x, mass in atoms:
        q = x * m
        if not np.isclose(q, round(q)):
            raise ValueError("atom off the node lattice")
        w[int(round(q)) - q_min] += mass
    if pieces and interior.any():
        n_mom = max(order, 1) + 1
        target = np.array([kernel.moment(j, order) for j in range(n_mom)])
        V = np.vander(s, n_mom, increasing=True)
        resid = target - V.T @ w
        Vi = V[interior]
        w[interior] += Vi @ np.linalg.solve(Vi.T @ Vi, resid)
    return q_min, w


@dataclass
class SmoothedProcess:
    """``X_eps`` and its derivatives on the inner grid ``[0, 1]``."""

    eps: float
    dt: float
    t: np.ndarray
    x_eps: np.ndarray | None = None
    dx_eps: np.ndarray | None = None
    ddx_eps: np.ndarray | None = None
    kernel: str = ""

    def require(self, order: int) -> np.ndarray:
        arr = (self.x_eps, self.dx_eps, self.ddx_eps)[order]
        if arr is None:
            raise ValueError(f"smoothed process lacks order-{order} data")
        return arr

    def integral(self, values: np.ndarray) -> float:
        return float(integrate.trapezoid(values, dx=self.dt))


def _apply(values: np.ndarray, q_min: int, w: np.ndarray, i0: int, i1: int) -> np.ndarray:
    """``out[i] = sum_j w[j] values[i - q_min - j]`` for ``i in [i0, i1]``."""
    nz = np.flatnonzero(w)
    out = np.zeros(i1 - i0 + 1)
    if len(nz) <= 8:
        for j in nz:
            shift = q_min + j
            out += w[j] * values[i0 - shift : i1 - shift + 1]
        return out
    full = np.convolve(values, w, mode="full")
    return full[i0 - q_min : i1 - q_min + 1]


def smooth(process, kernel: Kernel | str, eps: float, orders: Sequence[int] = (0, 1, 2)) -> SmoothedProcess:
    """Convolve a sampled process with ``phi_eps`` and return values on ``[0, 1]``.

    ``process`` is any object with ``t0``, ``dt`` and ``values`` (see
    :class:`fbmstat.fbm_engine.SampledProcess`).  ``eps`` must be an integer
    multiple ``m * dt`` with ``m >= 16`` (``m >= 1`` for the atom-only
    second-difference kernel).
    """
    kernel = builtin_kernel(kernel)
    dt = process.dt
    m_float = eps / dt
    m = int(round(m_float))
    if m < 1 or abs(m_float - m) > 1e-9 * m_float:
        raise ValueError(f"eps={eps} is not an integer multiple of dt={dt}")
    min_m = 1 if kernel.name == "second_difference" else 16
    if m < min_m:
        raise ValueError(f"eps/dt = {m} < {min_m} for kernel {kernel.name!r}")
    n = len(process.values)
    i0 = int(round(-process.t0 / dt))
    i1 = i0 + int(round(1.0 / dt))
    if abs(process.t0 + i0 * dt) > 1e-9 * dt:
        raise ValueError("time 0 is not a grid point")
    lo, hi = kernel.support
    # window of t is [t - eps*hi, t - eps*lo]
    if i0 - int(round(hi * m)) < 0 or i1 - int(round(lo * m)) > n - 1:
        raise ValueError(f"convolution window at eps={eps} exceeds the source grid")
    values = np.asarray(process.values, dtype=float)
    out = SmoothedProcess(eps=eps, dt=dt, t=process.t0 + dt * np.arange(i0, i1 + 1), kernel=kernel.name)
    for order in orders:
        q_min, w = grid_weights(kernel, order, m)
        arr = _apply(values, q_min, w, i0, i1) / eps**order
        setattr(out, ("x_eps", "dx_eps", "ddx_eps")[order], arr)
    return out


def z_process(smoothed: SmoothedProcess, h: float, sigma2h_sq: float) -> np.ndarray:
    """``Z_eps = eps^(2-h) * b''_eps / sigma_2H`` for a smoothed raw fBm path."""
    return smoothed.eps ** (2.0 - h) * smoothed.require(2) / np.sqrt(sigma2h_sq)
