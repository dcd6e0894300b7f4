"""
Unit tests for the tail_scale module.

The tests cover:
- Evaluation of H on its domain and the domain error at x <= 0.
- The inverse H^{-1}, closed form and bisection, scalar and vectorised.
- The envelope normaliser H^{-1}(log n) and its lower limit n >= 3.
- The regular-variation report and the config form of a scale.
"""

import math
import numpy as np
import pytest
from PerpetuityLab.accessories.tail_scale import (
    H1,
    TailScale,
    TailScaleDomainError,
    TailScaleRangeError,
    envelope_normalizer,
    envelope_normalizer_many,
    eval_h,
    eval_h_inverse,
    in_asymptotic_regime,
    inverse_many,
    regular_variation_report,
)


class TestTailScale:
    '''
    Tests for constructing a scale H and its config form.
    '''
    def test_default_scale_is_reciprocal(self):
        assert H1.rho == 1.0
        assert H1.is_pure_power
        assert eval_h(H1, 0.25) == pytest.approx(4.0)

    @pytest.mark.parametrize("kwargs", [
        {"rho": 0.0},
        {"rho": -1.0},
        {"log_exponent": -0.5},
        {"scale": 0.0},
        {"rho": math.inf},
    ])
    def test_invalid_scale_parameters(self, kwargs):
        with pytest.raises(ValueError):
            TailScale(**kwargs)

    def test_scale_dict_form(self):
        scale = TailScale(rho=2.0, log_exponent=1.5, scale=3.0)
        assert scale.to_dict() == {"rho": 2.0, "beta": 1.5, "scale": 3.0}
        assert TailScale.from_dict(scale.to_dict()) == scale
        assert TailScale.from_dict({}) == H1


class TestEvalH:
    '''
    Tests for evaluating H on and off its domain.
    '''
    def test_eval_h_power(self):
        assert eval_h(TailScale(rho=2, scale=3), 0.5) == pytest.approx(12.0)

    def test_eval_h_with_log_factor(self):
        scale = TailScale(rho=1.0, log_exponent=2.0)
        x = 0.01
        expected = (1 / x) * math.log(math.e + 1 / x) ** 2
        assert eval_h(scale, x) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("x", [0.0, -1.0, math.nan])
    def test_eval_h_outside_domain(self, x):
        with pytest.raises(TailScaleDomainError):
            eval_h(H1, x)

    def test_eval_h_is_decreasing(self):
        scale = TailScale(rho=0.5, log_exponent=1.0)
        xs = np.geomspace(1e-8, 10.0, 50)
        values = [eval_h(scale, x) for x in xs]
        assert all(b < a for a, b in zip(values, values[1:]))


class TestEvalHInverse:
    '''
    Tests for the inverse of H, closed form and by bisection.
    '''
    def test_inverse_power_closed_form(self):
        assert eval_h_inverse(H1, 4.0) == pytest.approx(0.25)
        assert eval_h_inverse(TailScale(rho=2, scale=3), 12.0) == pytest.approx(0.5)

    def test_inverse_with_log_factor_solves_h(self):
        scale = TailScale(rho=1.5, log_exponent=2.0, scale=0.7)
        for u in (0.5, 3.0, 250.0, 1e6):
            x = eval_h_inverse(scale, u)
            assert eval_h(scale, x) == pytest.approx(u, rel=1e-10)

    @pytest.mark.parametrize("u", [0.0, -2.0, math.inf, math.nan])
    def test_inverse_outside_range(self, u):
        with pytest.raises(TailScaleRangeError):
            eval_h_inverse(H1, u)

    def test_inverse_many_matches_scalar_inverse(self):
        scale = TailScale(rho=1.0, log_exponent=1.0)
        levels = np.array([0.3, 2.0, 40.0, 5e4])
        vectorised = inverse_many(scale, levels)
        scalar = [eval_h_inverse(scale, u) for u in levels]
        np.testing.assert_allclose(vectorised, scalar, rtol=1e-9)

    def test_inverse_many_rejects_nonpositive_levels(self):
        with pytest.raises(TailScaleRangeError):
            inverse_many(H1, np.array([1.0, 0.0]))


class TestEnvelopeNormalizer:
    '''
    Tests for the envelope normaliser H^{-1}(log n).
    '''
    def test_envelope_normalizer_reciprocal_log(self):
        assert envelope_normalizer(H1, 100) == pytest.approx(1 / math.log(100))

    def test_envelope_normalizer_needs_n_at_least_three(self):
        with pytest.raises(TailScaleRangeError):
            envelope_normalizer(H1, 2)

    def test_envelope_normalizer_many(self):
        n = np.array([3, 10, 1000])
        np.testing.assert_allclose(envelope_normalizer_many(H1, n), 1 / np.log(n))


class TestRegularVariation:
    '''
    Tests for the asymptotic-regime flag and the regular-variation report.
    '''
    def test_in_asymptotic_regime(self):
        assert in_asymptotic_regime(0.5)
        assert in_asymptotic_regime(1.0)
        assert not in_asymptotic_regime(0.0)
        assert not in_asymptotic_regime(1.5)

    def test_regular_variation_pure_power_is_exact(self):
        report = regular_variation_report(TailScale(rho=2.0), 1e-3)
        assert [row["y"] for row in report] == [0.5, 2.0, 10.0]
        for row in report:
            assert row["relative_error"] == pytest.approx(0.0, abs=1e-12)

    def test_regular_variation_log_factor_error_shrinks(self):
        scale = TailScale(rho=1.0, log_exponent=1.0)
        coarse = regular_variation_report(scale, 1e-2, ys=(2.0,))[0]["relative_error"]
        fine = regular_variation_report(scale, 1e-12, ys=(2.0,))[0]["relative_error"]
        assert fine < coarse
