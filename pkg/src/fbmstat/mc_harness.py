"""Monte Carlo harness: replication, summaries and comparisons with the limit constants.

Replicate ``i`` always uses seed ``base_seed + i``; results are collected in
replicate order, so summaries do not depend on thread scheduling.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from math import log, sqrt
from typing import Any, Callable

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid

from . import constants as C
from .estimators import (ScaleSet, estimate_H_sigma, estimate_sigma_known_H, functional_statistic,
                         s_g_statistic)
from .fbm_engine import make_grid, sample_fbm
from .kernels import smooth
from .models import ModelSpec, simulate_model

log_ = logging.getLogger(__name__)

__all__ = [
    "ReplicateRun",
    "run_replicates",
    "Experiment",
    "CellSummary",
    "McSummary",
    "run_experiment",
    "summarize",
    "variance_ratio",
    "VarianceRatio",
    "minimality_scan",
    "catalog",
    "experiment_from_config",
    "write_summary_json",
    "write_long_csv",
]

MAX_FAILURE_RATE = 0.05


# --- replication -------------------------------------------------------------


@dataclass
class ReplicateRun:
    results: list  # None where the replicate failed
    errors: dict[int, str]

    @property
    def n_failed(self) -> int:
        return len(self.errors)


def run_replicates(fn: Callable[[int], Any], replicates: int, base_seed: int = 0, threads: int = 1) -> ReplicateRun:
    """Call ``fn(base_seed + i)`` for ``i < replicates``; exceptions are recorded, not raised."""
    seeds = [base_seed + i for i in range(replicates)]

    def safe(seed):
        try:
            return fn(seed), None
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(safe, seeds))
    else:
        out = [safe(s) for s in seeds]
    errors = {seed: err for seed, (_, err) in zip(seeds, out) if err is not None}
    return ReplicateRun([res for res, _ in out], errors)


# --- experiments ------------------------------------------------------------------


@dataclass
class Experiment:
    """A Monte Carlo cell grid: one statistic evaluated for each ``(eps, k)``.

    ``statistic`` is one of ``s_g``, ``regression``, ``known_h``,
    ``functional``, ``f_test``, ``g_test``.  ``params`` carries the
    statistic-specific settings (e.g. the test spec fields).
    """

    name: str
    statistic: str
    model: ModelSpec | None = None
    kernel: str = "second_difference"
    h: float = 0.7
    eps_list: tuple[float, ...] = (2.0**-9,)
    k_list: tuple[float, ...] = (2.0,)
    scales: tuple[float, ...] = (1.0, 2.0)
    replicates: int = 500
    base_seed: int = 0
    target: str = ""
    dt_factor: int = 16
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {self.statistic!r}; choose from {', '.join(STATISTICS)}")
        if self.replicates < 50:
            raise ValueError("replicates must be >= 50")
        self.eps_list = tuple(float(e) for e in self.eps_list)
        self.k_list = tuple(float(k) for k in self.k_list)
        self.scales = tuple(float(c) for c in self.scales)
        dt = self.dt
        for e in self.eps_list:
            for c in self.scales:
                m = e * c / dt
                if abs(m - round(m)) > 1e-9 * m:
                    raise ValueError(f"eps*c = {e * c} is not a multiple of dt = {dt}")

    @property
    def dt(self) -> float:
        return min(self.eps_list) * min(self.scales) / self.dt_factor

    @property
    def window(self) -> float:
        return max(self.eps_list) * max(self.scales)


def _model_sigma(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    if spec.family in ("M4_additive", "M5_ou"):
        return np.full_like(x, spec.sigma)
    if spec.family in ("M6_geometric", "M7_mixed"):
        return spec.sigma * np.abs(x)
    if spec.family == "GeneralMuZero":
        return np.abs(spec.sigma(x))
    raise ValueError(f"no diffusion coefficient for {spec.family}")


def _stat_s_g(exp, path, eps, k):
    sm = smooth(path, exp.kernel, eps, orders=(2,))
    return {"s_g": s_g_statistic(sm, k, exp.h)}


def _stat_regression(exp, path, eps, k):
    x = simulate_model(exp.model, path)
    est = estimate_H_sigma(x, exp.kernel, k, ScaleSet(eps, exp.scales), exp.model)
    sigma = exp.model.sigma
    return {
        "h_hat": est.h_hat,
        "sigma_hat": est.sigma_hat,
        "h_err": (est.h_hat - exp.h) / sqrt(eps),
        # standardised by |sqrt(eps) log(eps)|
        "sigma_err": (est.sigma_hat - sigma) / abs(sqrt(eps) * log(eps)),
    }


def _stat_known_h(exp, path, eps, k):
    x = simulate_model(exp.model, path)
    s = estimate_sigma_known_H(x, exp.kernel, k, eps, exp.h, exp.model)
    return {"sigma_tilde": s, "sigma_err": (s - exp.model.sigma) / sqrt(eps)}


def _stat_functional(exp, path, eps, k):
    x = simulate_model(exp.model, path)
    sm = smooth(x, exp.kernel, eps, orders=(0, 1, 2))
    k0 = path.zero_index
    xs = x.values[k0 : k0 + int(round(1.0 / path.dt)) + 1]
    sig = _model_sigma(exp.model, xs)
    ref2 = float(trapezoid(sig**k, dx=path.dt))
    ref1 = float(trapezoid(sig, dx=path.dt))
    f2 = functional_statistic(2, None, k, sm, exp.h)
    f1 = functional_statistic(1, None, 1, sm, exp.h)
    return {
        "order2": f2,
        "order2_ref": ref2,
        "order2_fluct": (f2 - ref2) / sqrt(eps),
        "order1": f1,
        "order1_ref": ref1,
        "order1_fluct": (f1 - ref1) / sqrt(eps),
    }


def _test_spec(exp):
    from .hypothesis_tests import TestSpec

    p = dict(exp.params)
    return TestSpec(h=exp.h, kernel=exp.kernel, **p)


def _stat_test(exp, path, eps, k):
    from .hypothesis_tests import simulate_alternative, statistic, test_decision

    spec = _test_spec(exp)
    x, y = simulate_alternative(spec, path, eps)
    stat = statistic(spec, y)
    rep = test_decision(stat, spec, y)
    k0 = path.zero_index
    xs = x.values[k0 : k0 + int(round(1.0 / path.dt)) + 1]
    return {
        "statistic": stat,
        "reject": float(rep.reject),
        "int_x": float(trapezoid(xs, dx=path.dt)),
        "int_abs_x": float(trapezoid(np.abs(xs), dx=path.dt)),
    }


STATISTICS: dict[str, Callable] = {
    "s_g": _stat_s_g,
    "regression": _stat_regression,
    "known_h": _stat_known_h,
    "functional": _stat_functional,
    "f_test": _stat_test,
    "g_test": _stat_test,
}


def theoretical_variance(exp: Experiment, eps: float, k: float, name: str) -> float | None:
    """Limit variance of a scaled statistic, from :mod:`fbmstat.constants`, or None."""
    if exp.statistic == "s_g" and name == "s_g":
        return C.sigma_g_sq(C.g_coeffs(k), exp.h, exp.kernel)
    if exp.statistic == "regression":
        base = C.regression_variance(k, exp.scales, exp.h, exp.kernel)
        if name == "h_err":
            return base
        if name == "sigma_err":
            return exp.model.sigma**2 * base
    if exp.statistic == "known_h" and name == "sigma_err":
        return exp.model.sigma**2 * C.sigma_g_sq(C.g_coeffs(k), exp.h, exp.kernel) / k**2
    if exp.statistic in ("f_test", "g_test") and name == "statistic" and exp.params.get("d", 0.0) == 0.0:
        kk = 1 if exp.statistic == "f_test" else 2
        s0 = exp.params["sigma0"]
        if exp.params.get("variant", "").endswith(("const", "const_to_affine")):
            return C.sigma_g_sq(C.g_coeffs(kk), exp.h, exp.kernel) * s0 ** (2 * kk)
    return None


# --- summaries -------------------------------------------------------------------


@dataclass
class CellSummary:
    n: int
    mean: float
    var: float
    se: float
    ks: float | None
    theoretical_var: float | None = None
    values: np.ndarray = field(default=None, repr=False)
    seeds: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("values", "seeds")}


def summarize(values, center: float = 0.0, scale: float | None = None) -> CellSummary:
    """Moments and the KS distance to ``N(center, scale^2)``.

    The KS reference uses the given (theoretical) scale so that scale errors
    show up; with ``scale=None`` it is skipped.
    """
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    n = len(v)
    mean = float(v.mean()) if n else float("nan")
    var = float(v.var(ddof=1)) if n > 1 else 0.0
    ks = None
    if scale is not None and n > 0 and scale > 0:
        ks = float(stats.kstest(v, "norm", args=(center, scale)).statistic)
    return CellSummary(n=n, mean=mean, var=var, se=sqrt(var / n) if n else float("nan"), ks=ks, values=v)


@dataclass
class McSummary:
    experiment: str
    cells: dict[str, CellSummary]
    replicates: int
    failures: int
    failed: bool
    seeds: tuple[int, int]
    errors: dict[int, str] = field(default_factory=dict)

    def cell(self, name: str, eps: float | None = None, k: float | None = None) -> CellSummary:
        matches = [key for key in self.cells if key.endswith(f"|{name}")
                   and (eps is None or key.startswith(f"eps={eps!r}|"))
                   and (k is None or f"|k={float(k)!r}|" in key)]
        if len(matches) != 1:
            raise KeyError(f"cell {name!r} (eps={eps}, k={k}) is ambiguous or missing: {matches}")
        return self.cells[matches[0]]

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "replicates": self.replicates,
            "failures": self.failures,
            "failed": self.failed,
            "seeds": list(self.seeds),
            "cells": {k: v.to_dict() for k, v in self.cells.items()},
            "errors": {str(k): v for k, v in self.errors.items()},
        }


def _cell_key(eps: float, k: float, name: str) -> str:
    return f"eps={eps!r}|k={k!r}|{name}"


def run_experiment(exp: Experiment, threads: int = 1) -> McSummary:
    """Simulate ``exp.replicates`` paths and aggregate every cell."""
    fn = STATISTICS[exp.statistic]
    dt = exp.dt
    t0, n = make_grid(exp.window, dt)

    def one(seed):
        path = sample_fbm(exp.h, n, t0, dt, seed)
        out = {}
        for eps in exp.eps_list:
            for k in exp.k_list:
                for name, val in fn(exp, path, eps, k).items():
                    out[_cell_key(eps, k, name)] = float(val)
        return out

    run = run_replicates(one, exp.replicates, exp.base_seed, threads)
    ok_seeds = np.array([exp.base_seed + i for i, r in enumerate(run.results) if r is not None])
    ok = [r for r in run.results if r is not None]
    cells = {}
    if ok:
        for key in ok[0]:
            eps_s, k_s, name = key.split("|")
            eps, k = float(eps_s[4:]), float(k_s[2:])
            tv = theoretical_variance(exp, eps, k, name)
            cs = summarize([r[key] for r in ok], 0.0, sqrt(tv) if tv else None)
            cs.theoretical_var = tv
            cs.seeds = ok_seeds
            cells[key] = cs
    failed = run.n_failed > MAX_FAILURE_RATE * exp.replicates
    if run.n_failed:
        log_.warning("%s: %d of %d replicates failed", exp.name, run.n_failed, exp.replicates)
    return McSummary(experiment=exp.name, cells=cells, replicates=exp.replicates, failures=run.n_failed,
                     failed=failed, seeds=(exp.base_seed, exp.base_seed + exp.replicates - 1), errors=run.errors)


@dataclass
class VarianceRatio:
    ratio: float
    lo: float
    hi: float


def variance_ratio(values, theoretical: float, n_boot: int = 2000, seed: int = 0) -> VarianceRatio:
    """Sample variance over ``theoretical`` with a percentile bootstrap 95% interval."""
    if theoretical <= 0:
        raise ValueError("theoretical variance must be positive")
    v = values.values if isinstance(values, CellSummary) else np.asarray(values, dtype=float)
    ratio = float(np.var(v, ddof=1) / theoretical)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(v), size=(n_boot, len(v)))
    boots = np.var(v[idx], axis=1, ddof=1) / theoretical
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return VarianceRatio(ratio, float(lo), float(hi))


def minimality_scan(k_list, h: float, kernel: str = "second_difference", scales=None,
                    mc_variances: dict | None = None) -> dict:
    """Theoretical (and optionally Monte Carlo) variance per ``k`` and their argmins.

    With ``scales`` the theoretical column is the regression variance,
    otherwise ``sigma_gk^2 / k^2``.
    """
    k_list = [float(k) for k in k_list]
    if not {1.0, 2.0, 3.0, 4.0} <= set(k_list):
        raise ValueError("k_list must contain 1, 2, 3 and 4")
    rows = []
    for k in k_list:
        if scales is None:
            th = C.sigma_g_sq(C.g_coeffs(k), h, kernel) / k**2
        else:
            th = C.regression_variance(k, scales, h, kernel)
        row = {"k": k, "theoretical": th}
        if mc_variances is not None:
            row["mc"] = float(mc_variances[k])
        rows.append(row)
    th_arg = min(rows, key=lambda r: r["theoretical"])["k"]
    out = {"rows": rows, "theoretical_argmin": th_arg}
    if mc_variances is not None:
        out["mc_argmin"] = min(rows, key=lambda r: r["mc"])["k"]
    out["minimal_at_2"] = th_arg == 2.0 and out.get("mc_argmin", 2.0) == 2.0
    return out


# --- catalog and I/O -------------------------------------------------------------


def catalog() -> dict[str, Experiment]:
    """Built-in experiments (desk scale)."""
    m4 = ModelSpec("M4_additive", sigma=2.0, mu=0.5, c=1.0)
    m6 = ModelSpec("M6_geometric", sigma=2.0, mu=0.5, c=1.0)
    m6f = ModelSpec("M6_geometric", sigma=1.5, mu=0.3, c=1.0)
    e9 = (2.0**-9,)
    return {
        "sg2_clt": Experiment("sg2_clt", "s_g", eps_list=e9, k_list=(2,), target="S_g2 Gaussian limit"),
        "regression_m4": Experiment("regression_m4", "regression", m4, eps_list=e9, target="joint (H, sigma)"),
        "regression_m6": Experiment("regression_m6", "regression", m6, eps_list=e9, target="joint (H, sigma)"),
        "known_h_m4": Experiment("known_h_m4", "known_h", m4, eps_list=e9, k_list=(1, 2, 3, 4),
                                 target="sigma with H known"),
        "functional_m6": Experiment("functional_m6", "functional", m6f, h=0.85,
                                    eps_list=(2.0**-7, 2.0**-8, 2.0**-9), replicates=100,
                                    target="order 1 vs order 2 functionals"),
        "ftest_null": Experiment("ftest_null", "f_test", eps_list=e9, replicates=1000,
                                 params={"variant": "F_const", "sigma0": 1.0, "d": 0.0}, target="F size"),
        "gtest_null": Experiment("gtest_null", "g_test", eps_list=e9,
                                 params={"variant": "G_const_to_affine", "sigma0": 1.0, "d": 0.0},
                                 target="G null variance"),
    }


_MODEL_KEYS = {"model_family": "family", "model_sigma": "sigma", "model_mu": "mu", "model_c": "c"}


def experiment_from_config(cfg: dict) -> Experiment:
    """Build an experiment from a flat mapping (``model_*`` and ``param_*`` keys are nested)."""
    cfg = dict(cfg)
    model = None
    if "model_family" in cfg:
        model = ModelSpec(**{v: cfg.pop(k) for k, v in _MODEL_KEYS.items() if k in cfg})
    params = {k[6:]: cfg.pop(k) for k in list(cfg) if k.startswith("param_")}
    known = {f.name for f in fields(Experiment)}
    unknown = set(cfg) - known
    if unknown:
        raise ValueError(f"unknown experiment keys: {', '.join(sorted(unknown))}")
    for key in ("eps_list", "k_list", "scales"):
        if key in cfg and not isinstance(cfg[key], (list, tuple)):
            cfg[key] = (cfg[key],)
    return Experiment(model=model, params=params, **cfg)


def write_summary_json(summary: McSummary, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2, default=float)


def write_long_csv(summary: McSummary, path) -> None:
    """One row per replicate per cell: ``cell, seed, value``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "seed", "value"])
        for key, cs in summary.cells.items():
            for seed, v in zip(cs.seeds, cs.values):
                w.writerow([key, int(seed), repr(float(v))])
