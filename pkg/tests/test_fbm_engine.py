import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma

from fbmstat.fbm_engine import (FbmPath, SampledProcess, check_hurst, extend_path, fbm_covariance, fgn_autocovariance,
                         implied_covariance, make_grid, read_binary, sample_fbm, v2h_sq, write_binary, write_csv)

hurst = st.floats(0.05, 0.97)


def test_v2h_sq_brownian_case():
    # h = 1/2: Gamma(2) sin(pi/2) = 1
    assert v2h_sq(0.5) == pytest.approx(1.0, abs=1e-15)


@given(hurst)
def test_v2h_sq_formula(h):
    assert v2h_sq(h) == pytest.approx(1.0 / (gamma(2 * h + 1) * np.sin(np.pi * h)), rel=1e-13)


def test_covariance_is_min_for_brownian_motion():
    t = np.array([0.1, 0.5, 1.3])
    s = np.array([0.7, 0.2, 1.3])
    assert np.allclose(fbm_covariance(t, s, 0.5), np.minimum(t, s), atol=1e-14)


@given(hurst, st.integers(1, 40))
@settings(max_examples=40)
def test_fgn_sums_to_fbm_variance(h, n):
    # Var(b(n dt)) = sum_{i,j<n} gamma(i - j) = v^2 (n dt)^{2h}
    dt = 0.01
    lags = np.arange(n)
    gam = fgn_autocovariance(h, dt, lags)
    total = gam[0] * n + 2.0 * np.sum((n - lags[1:]) * gam[1:])
    assert total == pytest.approx(v2h_sq(h) * (n * dt) ** (2 * h), rel=1e-9)


@pytest.mark.parametrize("h", [0.3, 0.55, 0.7, 0.95])
def test_embedding_reproduces_exact_covariance(h):
    dt, t0 = 0.05, -0.2
    n = 30
    cov = implied_covariance(h, n, t0, dt)
    t = t0 + dt * np.arange(n)
    exact = fbm_covariance(t[:, None], t[None, :], h)
    assert np.max(np.abs(cov - exact)) < 1e-10


def test_sample_is_anchored_and_reproducible():
    t0, n = make_grid(2.0**-6, 2.0**-10)
    a = sample_fbm(0.7, n, t0, 2.0**-10, 42)
    b = sample_fbm(0.7, n, t0, 2.0**-10, 42)
    c = sample_fbm(0.7, n, t0, 2.0**-10, 43)
    assert a.values[a.zero_index] == 0.0
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert a.backend == "circulant"


def test_sample_variance_at_one():
    dt = 2.0**-6
    t0, n = make_grid(0.0, dt, pad=0.0)
    ends = np.array([sample_fbm(0.7, n, t0, dt, s).values[-1] for s in range(2000)])
    target = v2h_sq(0.7)
    # sd of the sample second moment is about target * sqrt(2 / 2000)
    assert abs(np.mean(ends**2) - target) < 4 * target * np.sqrt(2 / 2000)


def test_grid_contains_zero_and_covers_window():
    t0, n = make_grid(0.01, 0.001)
    t = t0 + 0.001 * np.arange(n)
    assert np.min(np.abs(t)) < 1e-12
    assert t[0] <= -0.02 + 1e-12 and t[-1] >= 1.02 - 1e-12


def test_hurst_validation():
    with pytest.raises(ValueError):
        check_hurst(1.0)
    with pytest.raises(ValueError):
        check_hurst(0.4, estimator=True)
    assert check_hurst(0.4) == 0.4


def test_grid_must_contain_zero():
    with pytest.raises(ValueError):
        sample_fbm(0.7, 10, -0.015, 0.01, 0)


def test_extend_path_sets_negative_times():
    p = SampledProcess(-0.2, 0.1, np.arange(5.0))
    e = extend_path(p, 7.0)
    assert list(e.values) == [7.0, 7.0, 2.0, 3.0, 4.0]
    assert list(p.values) == [0.0, 1.0, 2.0, 3.0, 4.0]


def test_binary_roundtrip(tmp_path):
    path = sample_fbm(0.65, 50, -0.1, 0.01, 3)
    write_binary(path, tmp_path / "p.fbm1")
    back = read_binary(tmp_path / "p.fbm1")
    assert isinstance(back, FbmPath)
    assert back.h == 0.65 and back.t0 == path.t0 and back.dt == path.dt
    assert np.array_equal(back.values, path.values)
    (tmp_path / "bad").write_bytes(b"XXXX")
    with pytest.raises(ValueError):
        read_binary(tmp_path / "bad")


def test_csv_writer(tmp_path):
    p = SampledProcess(0.0, 0.5, np.array([1.0, 2.0, 3.0]))
    write_csv(p, tmp_path / "p.csv")
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "t,value" and rows[2] == "0.5,2.0"
