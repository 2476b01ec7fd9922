import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from core.errors import InsufficientDataError, InvalidInputError
from core.logic.estimators import (
    estimate_Tmix,
    estimate_all,
    fit_scaling,
    lifshitz_ratio_report,
    linear_lower_sanity,
)
from core.models.enums import FitModel
from core.models.records import HittingRecord, TmixEstimate


def records_for(L, values, d=2):
    out = []
    for r, v in enumerate(values):
        out.append(HittingRecord(d=d, L=L, replica=r, seed=r, t_plus=v, timeout=v is None, events=0))
    return out


class TestEstimateTmix:
    def test_interpolated_quantile(self):
        estimate = estimate_Tmix(records_for(8, [4.0, 1.0, 3.0, 2.0]), min_samples=4)
        assert estimate.value == pytest.approx(3.25)
        assert estimate.samples == 4
        assert estimate.ci_low <= estimate.value <= estimate.ci_high

    def test_not_enough_samples(self):
        with pytest.raises(InsufficientDataError):
            estimate_Tmix(records_for(8, [1.0, 2.0]), min_samples=20)

    def test_too_many_timeouts(self):
        values = [float(k) for k in range(1, 8)] + [None] * 3
        with pytest.raises(InsufficientDataError):
            estimate_Tmix(records_for(8, values), min_samples=1)

    def test_quantile_touching_timeout(self):
        values = [float(k) for k in range(1, 7)] + [None] * 2
        with pytest.raises(InsufficientDataError):
            estimate_Tmix(records_for(8, values), min_samples=1)

    def test_timeouts_within_allowance(self):
        values = [float(k) for k in range(1, 20)] + [None]
        estimate = estimate_Tmix(records_for(8, values), min_samples=10)
        assert estimate.timeouts == 1
        assert math.isfinite(estimate.value)

    def test_mixed_L_rejected(self):
        with pytest.raises(InvalidInputError):
            estimate_Tmix(records_for(4, [1.0]) + records_for(8, [1.0]), min_samples=1)

    def test_estimate_all_skips_thin_L(self):
        records = records_for(4, [1.0] * 5) + records_for(8, [2.0] * 30)
        estimates = estimate_all(records, min_samples=20)
        assert list(estimates) == [8]

    @given(st.lists(st.floats(min_value=0.1, max_value=1e4), min_size=20, max_size=60),
           st.floats(min_value=0.0, max_value=1e3))
    def test_adding_a_new_maximum_never_lowers_estimate(self, values, extra):
        before = estimate_Tmix(records_for(8, values), min_samples=20)
        after = estimate_Tmix(records_for(8, values + [max(values) + extra]), min_samples=20)
        assert after.value >= before.value * (1.0 - 1e-12)


class TestFitScaling:
    def test_recovers_power(self):
        fit = fit_scaling({L: 2.0 * L ** 2 for L in (4, 8, 16, 32)})
        assert fit.exponent == pytest.approx(2.0)
        assert fit.amplitude == pytest.approx(2.0)
        assert fit.ci_low <= fit.exponent <= fit.ci_high

    def test_accepts_estimates(self):
        points = [TmixEstimate(L=L, value=float(L ** 3), ci_low=0.0, ci_high=0.0, samples=1, timeouts=0)
                  for L in (2, 3, 5)]
        assert fit_scaling(points).exponent == pytest.approx(3.0)

    def test_fixed_polylog_power(self):
        data = {L: L ** 2 * math.log(L) ** 1.5 for L in (4, 8, 16)}
        fit = fit_scaling(data, FitModel.POWER_POLYLOG, polylog_power=1.5)
        assert fit.exponent == pytest.approx(2.0)
        assert fit.polylog_fixed

    def test_free_polylog_power(self):
        data = {L: 3.0 * L ** 2 * math.log(L) ** 1.5 for L in (4, 8, 16, 32, 64)}
        fit = fit_scaling(data, FitModel.POWER_POLYLOG)
        assert fit.exponent == pytest.approx(2.0, abs=1e-6)
        assert fit.polylog_power == pytest.approx(1.5, abs=1e-6)
        assert not fit.polylog_fixed

    def test_two_points_rejected(self):
        with pytest.raises(InsufficientDataError):
            fit_scaling({4: 1.0, 8: 4.0})

    def test_non_positive_time_rejected(self):
        with pytest.raises(InvalidInputError):
            fit_scaling({4: 1.0, 8: 0.0, 16: 4.0})

    @given(st.lists(st.floats(min_value=-0.05, max_value=0.05), min_size=6, max_size=6))
    def test_recovers_exponent_under_multiplicative_noise(self, noise):
        data = {L: 0.5 * L ** 2 * (1.0 + eps) for L, eps in zip((4, 8, 16, 32, 64, 128), noise)}
        assert abs(fit_scaling(data).exponent - 2.0) <= 0.05


class TestReports:
    def test_linear_lower_sanity(self):
        records = []
        for L in (4, 8, 16):
            records += records_for(L, [float(L)] * 10)
        report = linear_lower_sanity(records)
        assert report.passes
        assert report.fit.exponent == pytest.approx(1.0)

    def test_linear_lower_sanity_needs_three_L(self):
        with pytest.raises(InsufficientDataError):
            linear_lower_sanity(records_for(4, [1.0]) + records_for(8, [2.0]))

    def test_lifshitz_ratio(self):
        estimates = {L: TmixEstimate(L=L, value=0.5 * L * L, ci_low=0.0, ci_high=0.0, samples=1, timeouts=0)
                     for L in (16, 32, 64)}
        report = lifshitz_ratio_report(estimates)
        assert report.ratios[64] == pytest.approx(0.5)
        assert report.in_band_at_largest
        assert report.approaching_target

    def test_lifshitz_ratio_out_of_band(self):
        estimates = [TmixEstimate(L=L, value=2.0 * L * L, ci_low=0.0, ci_high=0.0, samples=1, timeouts=0)
                     for L in (16, 32)]
        assert not lifshitz_ratio_report(estimates).in_band_at_largest
