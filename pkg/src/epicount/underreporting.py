"""Constant reporting factor from cumulative births and cumulative cases.

The cumulative balance B~_t = Z_t - Z_0 + rho C~_t - U~_t gives rho as the
slope of cumulative births on cumulative reported cases. Because U~_t sums
t independent increments, its variance grows like t, so the weighted fit uses
weights 1/t.
"""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np
from scipy import stats

from epicount.errors import ReportingError
from epicount.panel import SurveillancePanel, make_panel

_LOG = logging.getLogger(__name__)

OLS = "ols"
CUMULATIVE_VARIANCE = "cumulative_variance"
WEIGHTINGS = (OLS, CUMULATIVE_VARIANCE)

TREND_LEVEL = 0.01

SCALING_CAVEAT = (
    "Counts scaled by an estimated reporting factor; the extra variability "
    "from estimating it is not carried into later fits."
)


class LinearFit(NamedTuple):
    intercept: float
    slope: float
    slope_se: float
    residuals: np.ndarray


class ReportingFit(NamedTuple):
    """Reporting factor estimate.

    unreported is the implied U~_t series, a + rho * C~_t - B~_t.
    """

    rho_hat: float
    intercept: float
    rho_se: float
    bootstrap_se: float | None
    weights: np.ndarray
    weighting: str
    unreported: np.ndarray
    trend: float
    trend_pvalue: float
    nonconstant: bool
    area: str | None = None


def weighted_least_squares(x, y, weights) -> LinearFit:
    """Fit y = a + b x with positive weights; slope SE from the weighted residuals."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ReportingError("weights", "Regression weights must be positive.")
    design = np.column_stack([np.ones_like(x), x])
    root = np.sqrt(w)
    coef, _, rank, _ = np.linalg.lstsq(design * root[:, None], y * root, rcond=None)
    if rank < 2:
        raise ReportingError(
            "no_variation", "Cumulative cases do not vary; the slope is undefined."
        )
    residuals = y - design @ coef
    dof = max(x.size - 2, 1)
    sigma2 = float(np.sum(w * residuals**2)) / dof
    cov = sigma2 * np.linalg.inv(design.T @ (design * w[:, None]))
    return LinearFit(float(coef[0]), float(coef[1]), float(np.sqrt(cov[1, 1])), residuals)


def regression_weights(n_points: int, weighting: str) -> np.ndarray:
    if weighting == OLS:
        return np.ones(n_points)
    if weighting == CUMULATIVE_VARIANCE:
        return 1.0 / np.arange(1, n_points + 1)
    raise ReportingError(
        "weighting", "Weighting must be one of: {}.".format(", ".join(WEIGHTINGS))
    )


def reporting_trend_test(births, cases) -> tuple[float, float]:
    """Test for reporting drift on the increments.

    Fits B_t = a + rho C_t + kappa t C_t and returns kappa with its two-sided
    t-test p-value. Designs without enough variation give p = 1.
    """
    b = np.asarray(births, dtype=float)
    c = np.asarray(cases, dtype=float)
    t = np.arange(1, c.size + 1, dtype=float)
    design = np.column_stack([np.ones_like(c), c, t * c])
    coef, _, rank, _ = np.linalg.lstsq(design, b, rcond=None)
    if rank < 3 or c.size <= 3:
        return 0.0, 1.0
    kappa = float(coef[2])
    residuals = b - design @ coef
    dof = c.size - 3
    sigma2 = float(residuals @ residuals) / dof
    scale = max(1.0, float(np.max(np.abs(b))))
    if sigma2 <= (1e-12 * scale) ** 2:
        return kappa, 0.0 if abs(kappa) > 1e-10 * scale else 1.0
    cov = sigma2 * np.linalg.inv(design.T @ design)
    t_stat = kappa / np.sqrt(cov[2, 2])
    return kappa, float(2.0 * stats.t.sf(abs(t_stat), dof))


def _bootstrap_se(
    births: np.ndarray,
    cases: np.ndarray,
    fit: LinearFit,
    weights: np.ndarray,
    n_boot: int,
    seed: int,
) -> float | None:
    if n_boot < 2:
        return None
    rng = np.random.default_rng(seed)
    noise = births - fit.slope * cases
    centre = float(np.mean(noise))
    centred = noise - centre
    cum_cases = np.cumsum(cases)
    slopes = np.empty(n_boot)
    for k in range(n_boot):
        resampled = rng.choice(centred, size=centred.size, replace=True)
        boot_births = fit.slope * cases + centre + resampled
        slopes[k] = weighted_least_squares(cum_cases, np.cumsum(boot_births), weights).slope
    return float(np.std(slopes, ddof=1))


def regress_cumulative(
    births,
    cases,
    weighting: str = CUMULATIVE_VARIANCE,
    n_boot: int = 200,
    seed: int = 0,
    area: str | None = None,
) -> ReportingFit:
    """Estimate rho from per-step births (already lagged) and reported cases."""
    b = np.asarray(births, dtype=float)
    c = np.asarray(cases, dtype=float)
    if b.shape != c.shape or b.ndim != 1:
        raise ReportingError("shape", "Births and cases must be equal-length series.")
    if c.size < 3:
        raise ReportingError("too_short", "Need at least three time steps.")
    cum_b = np.cumsum(b)
    cum_c = np.cumsum(c)
    if cum_c[-1] == 0:
        raise ReportingError(
            "no_cases", "No reported cases; the reporting factor is undefined.", area=area
        )
    weights = regression_weights(c.size, weighting)
    fit = weighted_least_squares(cum_c, cum_b, weights)
    kappa, p_value = reporting_trend_test(b, c)
    nonconstant = p_value < TREND_LEVEL
    if nonconstant:
        _LOG.warning(
            "Reporting looks non-constant (trend %.3g, p = %.3g).", kappa, p_value
        )
    if fit.slope < 0:
        _LOG.warning("Estimated reporting factor %.3g is negative.", fit.slope)
    return ReportingFit(
        rho_hat=fit.slope,
        intercept=fit.intercept,
        rho_se=fit.slope_se,
        bootstrap_se=_bootstrap_se(b, c, fit, weights, n_boot, seed),
        weights=weights,
        weighting=weighting,
        unreported=-fit.residuals,
        trend=kappa,
        trend_pvalue=p_value,
        nonconstant=bool(nonconstant),
        area=area,
    )


def lagged_births(panel: SurveillancePanel) -> np.ndarray:
    """B_{t-d} for t = 1..T; steps before the first observation reuse B_1."""
    if panel.births is None:
        raise ReportingError("missing_births", "Panel has no births column.")
    source = np.clip(np.arange(panel.n_times) - panel.maternal_lag, 0, None)
    return panel.births[:, source].astype(float)


def fit_reporting(
    panel: SurveillancePanel,
    weighting: str = CUMULATIVE_VARIANCE,
    area: str | None = None,
    n_boot: int = 200,
    seed: int = 0,
) -> ReportingFit:
    """Fit rho for one area, or for the panel total when area is None."""
    births = lagged_births(panel)
    if panel.n_times < 3:
        raise ReportingError("too_short", "Need at least three time steps.")
    if area is None:
        b = births.sum(axis=0)
        c = panel.counts.sum(axis=0)
    else:
        if area not in panel.areas:
            raise ReportingError("unknown_area", f"No area '{area}'.", area=area)
        row = panel.areas.index(area)
        b = births[row]
        c = panel.counts[row]
    return regress_cumulative(b, c, weighting, n_boot, seed, area)


def scale_counts(panel: SurveillancePanel, fit: ReportingFit) -> SurveillancePanel:
    """Counts replaced by rho_hat * C rounded to nearest (ties to even)."""
    scaled = np.rint(fit.rho_hat * panel.counts.astype(float)).astype(np.int64)
    return make_panel(
        panel.areas,
        scaled,
        panel.populations,
        panel.period,
        panel.births,
        panel.maternal_lag,
        (*panel.notes, SCALING_CAVEAT),
    )
