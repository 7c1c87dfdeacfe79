from __future__ import annotations

import numpy as np
import pytest
from epicount.errors import ReportingError
from epicount.panel import make_panel
from epicount.underreporting import (
    CUMULATIVE_VARIANCE,
    OLS,
    SCALING_CAVEAT,
    fit_reporting,
    lagged_births,
    regress_cumulative,
    regression_weights,
    reporting_trend_test,
    scale_counts,
    weighted_least_squares,
)


def reporting_panel(cases, births, maternal_lag=0):
    return make_panel(
        ["x"], [cases], [10_000], births=[births], maternal_lag=maternal_lag
    )


@pytest.mark.parametrize("weighting", [OLS, CUMULATIVE_VARIANCE])
def test_exact_linear_relation(weighting):
    cases = [3, 1, 4, 1, 5, 9, 2, 6]
    births = [2 * c for c in cases]
    fit = fit_reporting(reporting_panel(cases, births), weighting, n_boot=0)
    assert fit.rho_hat == pytest.approx(2.0)
    assert fit.weighting == weighting
    assert not fit.nonconstant
    assert np.all(fit.weights > 0)


def test_cumulative_variance_weights():
    assert np.allclose(regression_weights(4, CUMULATIVE_VARIANCE), [1, 1 / 2, 1 / 3, 1 / 4])
    assert np.all(regression_weights(4, OLS) == 1)
    with pytest.raises(ReportingError):
        regression_weights(4, "lowess")


def test_no_cases_is_an_error():
    with pytest.raises(ReportingError) as ex:
        fit_reporting(reporting_panel([0, 0, 0, 0], [5, 5, 5, 5]))
    assert ex.value.code == "no_cases"


def test_too_short():
    with pytest.raises(ReportingError) as ex:
        fit_reporting(reporting_panel([1, 2], [2, 4]))
    assert ex.value.code == "too_short"


def test_missing_births():
    panel = make_panel(["x"], [[1, 2, 3]], [100])
    with pytest.raises(ReportingError) as ex:
        fit_reporting(panel)
    assert ex.value.code == "missing_births"


def test_per_area_and_total():
    panel = make_panel(
        ["x", "y"],
        [[1, 2, 3, 4], [2, 2, 1, 3]],
        [1000, 1000],
        births=[[3, 6, 9, 12], [2, 2, 1, 3]],
    )
    assert fit_reporting(panel, area="x", n_boot=0).rho_hat == pytest.approx(3.0)
    assert fit_reporting(panel, area="y", n_boot=0).rho_hat == pytest.approx(1.0)
    with pytest.raises(ReportingError) as ex:
        fit_reporting(panel, area="z")
    assert ex.value.code == "unknown_area"


def test_slope_invariant_to_time_shift():
    rng = np.random.default_rng(2)
    cases = rng.poisson(20, size=60)
    births = 3 * cases + rng.normal(0, 2, size=60)
    full = regress_cumulative(births, cases, OLS, n_boot=0)
    # Dropping the first step shifts cumulative sums by a constant.
    shifted = regress_cumulative(births[1:], cases[1:], OLS, n_boot=0)
    direct = weighted_least_squares(
        np.cumsum(cases)[1:], np.cumsum(births)[1:], np.ones(59)
    )
    assert shifted.rho_hat == pytest.approx(direct.slope)
    assert full.rho_hat == pytest.approx(3.0, abs=0.1)


def test_lagged_births_carry_first_value():
    panel = reporting_panel([1, 1, 1, 1], [5, 6, 7, 8], maternal_lag=2)
    assert lagged_births(panel).tolist() == [[5.0, 5.0, 5.0, 6.0]]


def test_trend_test_constant_reporting_accepted():
    rng = np.random.default_rng(5)
    cases = rng.poisson(30, size=200).astype(float)
    births = 3 * cases
    _, p_value = reporting_trend_test(births, cases)
    assert p_value == 1.0


def test_trend_test_detects_drift():
    rejections = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        cases = rng.poisson(30, size=200).astype(float)
        rho_t = 2.0 + 0.01 * np.arange(1, 201)
        births = rho_t * cases + rng.normal(0, 2, size=200)
        _, p_value = reporting_trend_test(births, cases)
        rejections += p_value < 0.01
    assert rejections / 50 > 0.8


def test_bootstrap_se_is_reported():
    rng = np.random.default_rng(8)
    cases = rng.poisson(25, size=100)
    births = 3 * cases + rng.normal(0, 2, size=100)
    fit = regress_cumulative(births, cases, n_boot=100, seed=1)
    assert fit.bootstrap_se is not None
    assert fit.bootstrap_se > 0
    again = regress_cumulative(births, cases, n_boot=100, seed=1)
    assert again.bootstrap_se == fit.bootstrap_se


@pytest.mark.slow
def test_recovers_reporting_factor():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        cases = rng.poisson(25, size=100)
        births = 3 * cases + rng.normal(0, 2, size=100)
        fit = regress_cumulative(births, cases, n_boot=200, seed=seed)
        hits += abs(fit.rho_hat - 3.0) <= 3 * fit.bootstrap_se
    assert hits >= 95


def test_scale_identity():
    panel = reporting_panel([1, 2, 3], [1, 2, 3])
    fit = fit_reporting(panel, n_boot=0)
    scaled = scale_counts(panel, fit._replace(rho_hat=1.0))
    assert scaled.counts.tolist() == [[1, 2, 3]]
    assert SCALING_CAVEAT in scaled.notes


def test_scale_by_two():
    panel = reporting_panel([1, 2, 3], [2, 4, 6])
    fit = fit_reporting(panel, n_boot=0)
    assert scale_counts(panel, fit).counts.tolist() == [[2, 4, 6]]


def test_scale_rounds_half_to_even():
    panel = reporting_panel([3, 1, 5], [1, 1, 1])
    fit = fit_reporting(panel, n_boot=0)._replace(rho_hat=2.5)
    # 7.5 -> 8, 2.5 -> 2, 12.5 -> 12
    assert scale_counts(panel, fit).counts.tolist() == [[8, 2, 12]]
