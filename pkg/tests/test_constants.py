from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from fbmstat import constants as C
from fbmstat.fbm_engine import v2h_sq

A = np.array([1.0, -2.0, 1.0])  # second-difference weights at 0, 1, 2


def rho_second_difference(x, h, b=1.0, c=1.0):
    """Oracle: correlation of second differences of fBm at scales b, c and lag x."""
    num = sum(A[i] * A[j] * abs(x + i * b - j * c) ** (2 * h) for i in range(3) for j in range(3))
    den = sum(A[i] * A[j] * abs(i - j) ** (2 * h) for i in range(3) for j in range(3))
    return (b * c) ** (-h) * num / den


@pytest.fixture(autouse=True)
def _quiet_quad(recwarn):
    yield


def int_rho_sq(h, b=1.0, c=1.0):
    f = lambda x: rho_second_difference(x, h, b, c) ** 2  # noqa: E731
    pts = sorted({j * c - i * b for i in range(3) for j in range(3)})
    lo, hi = pts[0] - 1.0, pts[-1] + 1.0
    body = integrate.quad(f, lo, hi, points=pts, limit=200, epsabs=1e-13, epsrel=1e-12)[0]
    left = integrate.quad(f, -np.inf, lo, epsabs=1e-14, epsrel=1e-12, limit=400)[0]
    right = integrate.quad(f, hi, np.inf, epsabs=1e-14, epsrel=1e-12, limit=400)[0]
    return body + left + right


def test_gaussian_abs_moments():
    assert C.gaussian_abs_moment(2) == pytest.approx(1.0)
    assert C.gaussian_abs_moment(4) == pytest.approx(3.0)
    assert C.gaussian_abs_moment(1) == pytest.approx(np.sqrt(2 / np.pi))


def test_hermite_polynomials():
    x = np.linspace(-2, 2, 7)
    assert np.allclose(C.hermite_eval(2, x), x**2 - 1)
    assert np.allclose(C.hermite_eval(4, x), x**4 - 6 * x**2 + 3)


@pytest.mark.parametrize("k", [2, 4])
def test_even_series_is_exact(k):
    series = C.g_coeffs(k)
    x = np.linspace(-3, 3, 13)
    assert np.allclose(series(x), np.abs(x) ** k / C.gaussian_abs_moment(k) - 1.0, atol=1e-12)
    assert series.tail_bound == 0.0


@given(st.floats(1.0, 4.0))
@settings(max_examples=20)
def test_series_norm_budget(k):
    # sum of chaos variances plus the tail equals Var g_k(N)
    s = C.g_coeffs(k)
    total = np.sum(s.weights()) + s.tail_bound
    assert total == pytest.approx(C.gaussian_abs_moment(2 * k) / C.gaussian_abs_moment(k) ** 2 - 1.0, rel=1e-10)


def test_g_coefficient_formula():
    s = C.g_coeffs(3.0, n_max=3)
    expected = [3.0 / factorial(2), 3.0 * 1.0 / factorial(4), 3.0 * 1.0 * -1.0 / factorial(6)]
    assert np.allclose(s.coeffs, expected)


@given(st.floats(0.52, 0.97))
@settings(max_examples=15, deadline=None)
def test_second_difference_variance_closed_form(h):
    exact = v2h_sq(h) * (4.0 - 2.0 ** (2 * h))
    for method in ("fourier", "time_domain"):
        assert C.spectral_variance(2, h, "second_difference", method=method, verify=False) == pytest.approx(
            exact, rel=1e-9)


@pytest.mark.parametrize("h", [0.55, 0.7, 0.9])
def test_order_one_variance_oracle(h):
    v2 = v2h_sq(h)
    f = lambda x: (1 - abs(x)) * 0.5 * v2 * (abs(x + 1) ** (2 * h) + abs(x - 1) ** (2 * h) - 2 * abs(x) ** (2 * h))  # noqa: E731
    exact = integrate.quad(f, -1, 1, points=[0.0], epsabs=1e-14, epsrel=1e-13)[0]
    for method in ("fourier", "time_domain"):
        assert C.spectral_variance(1, h, "second_difference", method=method, verify=False) == pytest.approx(
            exact, rel=1e-9)


@pytest.mark.parametrize("kernel", ["c2_bump", "quartic_bump"])
@pytest.mark.parametrize("order", [1, 2])
def test_routes_agree_for_smooth_kernels(kernel, order):
    a = C.spectral_variance(order, 0.7, kernel, method="fourier", verify=False)
    b = C.spectral_variance(order, 0.7, kernel, method="time_domain", verify=False)
    assert a == pytest.approx(b, rel=1e-9)
    assert C.spectral_variance(order, 0.7, kernel, method="both") == pytest.approx((a, b), rel=1e-12)


@given(x=st.floats(-6.0, 6.0), c=st.sampled_from([1.0, 2.0, 3.0]))
@settings(max_examples=30, deadline=None)
def test_rho_matches_second_difference_oracle(x, c):
    h = 0.7
    got = C.rho_H(x, 1.0, c, h, "second_difference", method="time_domain")
    assert got == pytest.approx(rho_second_difference(x, h, 1.0, c), abs=1e-10)


@pytest.mark.parametrize("kernel", ["second_difference", "c2_bump"])
def test_rho_routes_agree_and_normalise(kernel):
    x = np.array([0.0, 0.3, 1.7, 4.0, 9.5])
    a = C.rho_H(x, 1.0, 2.0, 0.75, kernel, method="fourier")
    b = C.rho_H(x, 1.0, 2.0, 0.75, kernel, method="time_domain")
    assert np.allclose(a, b, atol=1e-9)
    assert C.rho_H(0.0, 2.0, 2.0, 0.75, kernel) == pytest.approx(1.0, abs=1e-10)
    # rho(x, b, c) = rho(-x, c, b)
    assert C.rho_H(0.4, 1.0, 2.0, 0.75, kernel) == pytest.approx(C.rho_H(-0.4, 2.0, 1.0, 0.75, kernel), abs=1e-10)


@pytest.mark.parametrize("h", [0.6, 0.7, 0.9])
def test_sigma_g2_matches_oracle(h):
    # g_2 = H_2, so sigma_g2^2 = 2 int rho^2
    assert C.sigma_g_sq(C.g_coeffs(2), h) == pytest.approx(2.0 * int_rho_sq(h), rel=1e-10)


def test_rho_g_cross_scale_oracle():
    h = 0.7
    got = C.rho_g(1.0, 2.0, C.g_coeffs(2), h)
    assert got == pytest.approx(2.0 * int_rho_sq(h, 1.0, 2.0) / np.sqrt(2.0), rel=1e-10)


def test_rho_table_tail_is_small():
    tab = C.rho_table(0.7)
    val, tail = tab.power_integral(2)
    assert abs(tail) < 1e-8 * val
    assert val == pytest.approx(int_rho_sq(0.7), rel=1e-10)
    assert C.rho_table(0.7, cutoff=400.0).power_integral(2)[0] == pytest.approx(val, rel=1e-12)


def test_regression_variance_two_scales():
    # with two scales the weights are +-1/(k log 2) times sqrt(c_i)
    h, k = 0.7, 2.0
    s = C.g_coeffs(k)
    d = np.array([-1.0, np.sqrt(2.0)]) / (k * np.log(2.0))
    r11, r22, r12 = C.rho_g(1, 1, s, h), C.rho_g(2, 2, s, h), C.rho_g(1, 2, s, h)
    expected = d[0] ** 2 * r11 + d[1] ** 2 * r22 + 2 * d[0] * d[1] * r12
    assert C.regression_variance(k, (1.0, 2.0), h) == pytest.approx(expected, rel=1e-12)
    assert C.sigma_gm_sq([1.0, 2.0], [0.0, 0.0], s, h) == 0.0


def test_constants_bundle():
    const = C.spectral_constants(0.7)
    names = [n for n, _ in const.rows((1, 2), (1.0, 2.0))]
    assert names[:3] == ["v2h_sq", "sigma2h_sq", "sigma_tilde2h_sq"]
    assert "regression_var_k2" in names and "sigma_g1_sq" in names


def test_disk_cache_roundtrip(tmp_path):
    cache = C.DiskCache(tmp_path)
    key = C._cache_key("x", h=0.7)
    assert cache.get(key) is None
    cache.put(key, 1.25)
    assert C.DiskCache(tmp_path).get(key) == 1.25
    (tmp_path / f"{C._cache_key('y')}.json").write_text("{broken")
    assert C.DiskCache(tmp_path).get(C._cache_key("y")) is None
    assert not list(tmp_path.glob("*.tmp"))


def test_bad_method():
    with pytest.raises(ValueError):
        C.spectral_variance(2, 0.7, method="nope")
