"""Exact synthesis of fractional Brownian motion on a uniform grid.

Normalisation: ``E[b(t) b(s)] = v2h_sq / 2 * (|t|^2h + |s|^2h - |t - s|^2h)``
with ``v2h_sq = 1 / (Gamma(2h + 1) sin(pi h))``; for ``h = 1/2`` this is
standard Brownian motion.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from math import gamma, pi, sin
from pathlib import Path

import numpy as np
from scipy import linalg

__all__ = [
    "SampledProcess",
    "FbmPath",
    "v2h_sq",
    "fbm_covariance",
    "fgn_autocovariance",
    "sample_fbm",
    "make_grid",
    "extend_path",
    "implied_covariance",
    "write_csv",
    "write_binary",
    "read_binary",
]

MAGIC = b"FBM1"
EIG_TOL = 1e-10


def check_hurst(h: float, *, estimator: bool = False) -> float:
    h = float(h)
    if not 0.0 < h < 1.0:
        raise ValueError(f"Hurst parameter must lie in (0, 1), got {h}")
    if estimator and not 0.5 < h < 1.0:
        raise ValueError(f"estimators require 1/2 < h < 1, got {h}")
    return h


@dataclass
class SampledProcess:
    """Values of a process at ``t0 + j * dt``, ``j = 0..n-1``."""

    t0: float
    dt: float
    values: np.ndarray

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)

    @property
    def zero_index(self) -> int:
        return int(round(-self.t0 / self.dt))

    def with_values(self, values: np.ndarray) -> "SampledProcess":
        return SampledProcess(self.t0, self.dt, np.asarray(values, dtype=float))


@dataclass
class FbmPath(SampledProcess):
    h: float = 0.5
    seed: int = 0
    backend: str = field(default="circulant")


def v2h_sq(h: float) -> float:
    """``1 / (Gamma(2h + 1) sin(pi h))``."""
    h = check_hurst(h)
    return 1.0 / (gamma(2.0 * h + 1.0) * sin(pi * h))


def fbm_covariance(t, s, h: float):
    h = check_hurst(h)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    return 0.5 * v2h_sq(h) * (np.abs(t) ** (2 * h) + np.abs(s) ** (2 * h) - np.abs(t - s) ** (2 * h))


def fgn_autocovariance(h: float, dt: float, lags) -> np.ndarray:
    """Autocovariance of the increments ``b(t + dt) - b(t)`` at integer lags."""
    j = np.abs(np.asarray(lags, dtype=float))
    e = 2.0 * h
    return 0.5 * v2h_sq(h) * dt**e * ((j + 1.0) ** e - 2.0 * j**e + np.abs(j - 1.0) ** e)


def _circulant_eigs(h: float, n_inc: int, dt: float) -> np.ndarray:
    gam = fgn_autocovariance(h, dt, np.arange(n_inc + 1))
    row = np.concatenate([gam, gam[-2:0:-1]])
    return np.fft.fft(row).real


def make_grid(eps_max: float, dt: float, pad: float = 2.0) -> tuple[float, int]:
    """``(t0, n)`` for a grid covering ``[-pad*eps_max, 1 + pad*eps_max]`` with 0 on the grid."""
    k_left = int(np.ceil(pad * eps_max / dt - 1e-9))
    k_right = int(np.ceil((1.0 + pad * eps_max) / dt - 1e-9))
    return -k_left * dt, k_left + k_right + 1


def sample_fbm(h: float, n: int, t0: float, dt: float, seed: int) -> FbmPath:
    """Draw ``b_H`` at ``t0 + j*dt`` (``j < n``) with ``b_H(0) = 0``.

    Increments are synthesised by circulant embedding of the fractional
    Gaussian noise covariance; if the embedding has eigenvalues below
    ``-1e-10`` the Toeplitz covariance is factorised by Cholesky instead.
    The generator is Philox keyed by ``seed``.
    """
    h = check_hurst(h)
    if n < 2 or dt <= 0:
        raise ValueError("need n >= 2 and dt > 0")
    k0 = int(round(-t0 / dt))
    if k0 < 0 or k0 >= n or abs(t0 + k0 * dt) > 1e-9 * dt:
        raise ValueError("grid must contain time 0")
    rng = np.random.Generator(np.random.Philox(int(seed)))
    n_inc = n - 1
    lam = _circulant_eigs(h, n_inc, dt)
    if lam.min() >= -EIG_TOL:
        size = len(lam)
        coef = np.sqrt(np.clip(lam, 0.0, None) / size)
        w = rng.standard_normal(size) + 1j * rng.standard_normal(size)
        inc = np.fft.fft(coef * w).real[:n_inc]
        backend = "circulant"
    else:
        cov = linalg.toeplitz(fgn_autocovariance(h, dt, np.arange(n_inc)))
        inc = linalg.cholesky(cov, lower=True) @ rng.standard_normal(n_inc)
        backend = "cholesky"
    values = np.concatenate([[0.0], np.cumsum(inc)])
    values -= values[k0]
    values[k0] = 0.0
    return FbmPath(t0=t0, dt=dt, values=values, h=h, seed=int(seed), backend=backend)


def implied_covariance(h: float, n: int, t0: float, dt: float) -> np.ndarray:
    """Covariance of the vector produced by :func:`sample_fbm` on this grid.

    Reconstructed from the circulant eigenvalues (not from the closed form),
    so comparing it with :func:`fbm_covariance` checks the embedding.
    """
    lam = _circulant_eigs(h, n - 1, dt)
    row = np.fft.ifft(np.clip(lam, 0.0, None)).real
    inc_cov = linalg.toeplitz(row[: n - 1])
    k0 = int(round(-t0 / dt))
    # values = A @ inc with A lower-triangular ones, re-anchored at k0
    A = np.tril(np.ones((n, n - 1)), -1)
    A = A - A[k0]
    return A @ inc_cov @ A.T


def extend_path(process: SampledProcess, c: float) -> SampledProcess:
    """Replace values at negative times by the constant ``c``."""
    vals = np.array(process.values, dtype=float)
    vals[: process.zero_index] = c
    if isinstance(process, FbmPath):
        return replace(process, values=vals)
    return SampledProcess(process.t0, process.dt, vals)


def write_csv(process: SampledProcess, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "value"])
        for t, v in zip(process.t, process.values):
            writer.writerow([repr(float(t)), repr(float(v))])


def write_binary(path_obj: FbmPath, path) -> None:
    """Compact dump: ``FBM1``, then h, t0, dt (f64 LE), n (i64 LE), values (f64 LE)."""
    header = MAGIC + struct.pack("<dddq", path_obj.h, path_obj.t0, path_obj.dt, path_obj.n)
    Path(path).write_bytes(header + np.asarray(path_obj.values, dtype="<f8").tobytes())


def read_binary(path) -> FbmPath:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError("not an FBM1 file")
    h, t0, dt, n = struct.unpack("<dddq", raw[4:36])
    values = np.frombuffer(raw[36:], dtype="<f8", count=n).astype(float)
    return FbmPath(t0=t0, dt=dt, values=values, h=h, seed=0, backend="file")
