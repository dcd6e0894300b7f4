"""
Unit tests for the numerics module: one-dimensional minimisation, root
bracketing, log-space quadrature, binomial intervals and limit fits.
"""

import math
import numpy as np
import pytest
from scipy import stats
from PerpetuityLab.accessories.numerics import (
    BracketError,
    binomial_interval,
    bisect_decreasing,
    dkw_halfwidth,
    golden_section_minimize,
    grid_then_golden,
    ks_distance,
    ks_two_sample,
    least_squares_limit,
    log_integrate,
)


# --- Tests for golden_section_minimize ---
def test_golden_section_quadratic():
    argmin, minimum, converged = golden_section_minimize(lambda x: (x - 0.3) ** 2 + 1.0, 0.0, 1.0)
    assert converged
    assert argmin == pytest.approx(0.3, abs=1e-6)
    assert minimum == pytest.approx(1.0)


def test_golden_section_monotone_returns_endpoint():
    argmin, minimum, _ = golden_section_minimize(lambda x: x, 2.0, 5.0)
    assert argmin == 2.0
    assert minimum == 2.0


def test_golden_section_tolerates_infinity():
    def fun(x):
        return math.inf if x > 0.8 else (x - 0.5) ** 2

    argmin, minimum, _ = golden_section_minimize(fun, 0.0, 1.0)
    assert argmin == pytest.approx(0.5, abs=1e-6)
    assert minimum == pytest.approx(0.0, abs=1e-12)


# --- Tests for grid_then_golden ---
def test_grid_then_golden_finds_global_minimum():
    # Two wells, the deeper one at x = 2
    def objective(x):
        x = np.asarray(x, dtype=float)
        return np.minimum((x + 1.0) ** 2 + 0.5, (x - 2.0) ** 2)

    argmin, minimum = grid_then_golden(objective, np.linspace(-3, 3, 61))
    assert argmin == pytest.approx(2.0, abs=1e-6)
    assert minimum == pytest.approx(0.0, abs=1e-10)


def test_grid_then_golden_all_infinite():
    argmin, minimum = grid_then_golden(lambda x: np.full(np.shape(x), np.inf), np.linspace(0, 1, 5))
    assert math.isnan(argmin)
    assert minimum == math.inf


# --- Tests for bisect_decreasing ---
def test_bisect_decreasing_reciprocal():
    root = bisect_decreasing(lambda x: 1.0 / x, 7.0)
    assert root == pytest.approx(1 / 7, rel=1e-10)


def test_bisect_decreasing_expands_upper_bracket():
    root = bisect_decreasing(lambda x: 1.0 / x, 1e-3)
    assert root == pytest.approx(1e3, rel=1e-10)


def test_bisect_decreasing_bracket_failure():
    # Bounded above by 1, so the target 2 can never be reached
    with pytest.raises(BracketError):
        bisect_decreasing(lambda x: 1.0 / (1.0 + x), 2.0)


# --- Tests for log_integrate ---
def test_log_integrate_polynomial():
    log_value, error = log_integrate(lambda x: 2.0 * np.log(x), 0.0, 3.0)
    assert log_value == pytest.approx(math.log(9.0), abs=1e-10)
    assert error <= 1e-10


def test_log_integrate_no_underflow():
    # int_0^1 exp(-1000 x) dx, with every integrand value below 1
    log_value, _ = log_integrate(lambda x: -1000.0 * x, 0.0, 1.0)
    expected = math.log((1 - math.exp(-1000.0)) / 1000.0)
    assert log_value == pytest.approx(expected, abs=1e-8)


def test_log_integrate_zero_integrand():
    log_value, error = log_integrate(lambda x: np.full(np.shape(x), -np.inf), 0.0, 1.0)
    assert log_value == -math.inf
    assert error == 0.0


def test_log_integrate_invalid_limits():
    with pytest.raises(ValueError):
        log_integrate(lambda x: x, 1.0, 0.0)
    with pytest.raises(ValueError):
        log_integrate(lambda x: x, 0.0, math.inf)


# --- Tests for binomial_interval and dkw_halfwidth ---
def test_binomial_interval_covers_estimate():
    lower, upper = binomial_interval(30, 100)
    assert lower < 0.3 < upper
    assert lower == pytest.approx(stats.beta.ppf(0.025, 30, 71))


def test_binomial_interval_edges():
    assert binomial_interval(0, 50)[0] == 0.0
    assert binomial_interval(50, 50)[1] == 1.0


def test_dkw_halfwidth():
    assert dkw_halfwidth(1000, 0.99) == pytest.approx(math.sqrt(math.log(200.0) / 2000.0))
    assert dkw_halfwidth(4000) < dkw_halfwidth(1000)


# --- Tests for the Kolmogorov-Smirnov helpers ---
def test_ks_distance_uniform_sample():
    rng = np.random.default_rng(1)
    assert ks_distance(rng.random(5000), stats.uniform.cdf) < 0.035


def test_ks_two_sample_identical():
    sample = np.arange(100.0)
    assert ks_two_sample(sample, sample) == 0.0


# --- Tests for least_squares_limit ---
def test_least_squares_limit_log_model():
    eps = np.array([1e-1, 1e-2, 1e-3, 1e-4])
    values = 0.5 + 2.0 / np.log(1.0 / eps)
    assert least_squares_limit(eps, values, model="log") == pytest.approx(0.5)


def test_least_squares_limit_laplace_model():
    eps = np.array([0.2, 0.1, 0.05, 0.02])
    values = -1.0 + 0.3 * eps - 0.1 * eps * np.log(eps)
    assert least_squares_limit(eps, values, model="laplace") == pytest.approx(-1.0)


def test_least_squares_limit_too_few_points():
    assert math.isnan(least_squares_limit([0.1], [1.0]))
