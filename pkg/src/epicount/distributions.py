"""Probability kernels for the count models.

The negative binomial is used in a single (mean, size) parameterization:
variance mu * (1 + mu / size), success probability p = mu / (mu + size).
All log-probabilities are computed in log space with log-gamma.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import stats
from scipy.special import gammaln, xlogy

from epicount.errors import DistributionError

# numpy refuses Poisson rates above roughly 9.2e18.
POISSON_MAX_RATE = 1e18


class NegBinParams(NamedTuple):
    mu: float
    size: float

    @property
    def success_prob(self) -> float:
        return self.mu / (self.mu + self.size)

    @property
    def variance(self) -> float:
        return self.mu * (1.0 + self.mu / self.size)


class PureBirthLaw(NamedTuple):
    """Linear (Yule-Furry) birth process started from n0 individuals."""

    n0: int
    rate: float
    horizon: float

    @property
    def success_prob(self) -> float:
        """p_t = 1 - exp(-rate * horizon)."""
        return -math.expm1(-self.rate * self.horizon)

    @property
    def births_mean(self) -> float:
        return self.n0 * math.expm1(self.rate * self.horizon)

    @property
    def births_variance(self) -> float:
        mu = self.births_mean
        return mu * (1.0 + mu / self.n0)


def _check_counts(k) -> np.ndarray:
    k_arr = np.asarray(k)
    if np.any(k_arr < 0):
        raise DistributionError("support", "Counts must be non-negative.")
    return k_arr


def _check_negbin(mu, size) -> None:
    if np.any(np.asarray(size) <= 0):
        raise DistributionError("size", "Negative binomial size must be > 0.")
    if np.any(np.asarray(mu) < 0):
        raise DistributionError("mean", "Negative binomial mean must be >= 0.")


def negbin_logpmf_array(k, mu, size) -> np.ndarray:
    """Vectorized negative binomial log-pmf without argument checks.

    mu = 0 is a point mass at zero; size = inf is the Poisson limit.
    """
    k = np.asarray(k, dtype=float)
    mu = np.asarray(mu, dtype=float)
    size = np.asarray(size, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        poisson = xlogy(k, mu) - mu - gammaln(k + 1.0)
        log_total = np.log(mu + size)
        nb = (
            gammaln(k + size)
            - gammaln(size)
            - gammaln(k + 1.0)
            - size * np.log1p(mu / size)
            + xlogy(k, mu)
            - k * log_total
        )
    return np.where(np.isinf(size), poisson, nb)


def negbin_logpmf(k, params: NegBinParams):
    """log of C(k+r-1, k) (1-p)^r p^k with p = mu / (mu + r)."""
    k_arr = _check_counts(k)
    _check_negbin(params.mu, params.size)
    out = negbin_logpmf_array(k_arr, params.mu, params.size)
    return float(out) if out.ndim == 0 else out


def negbin_pmf(k, params: NegBinParams):
    return np.exp(negbin_logpmf(k, params))


def negbin_tail_cutoff(mu: float, size: float) -> int:
    """Support cutoff K = mu + 20 sqrt(mu (1 + mu / size)) + 50."""
    return int(math.ceil(mu + 20.0 * math.sqrt(mu * (1.0 + mu / size)) + 50.0))


def poisson_logpmf(k, mean):
    k_arr = _check_counts(k)
    if np.any(np.asarray(mean) < 0):
        raise DistributionError("mean", "Poisson mean must be >= 0.")
    out = xlogy(k_arr, mean) - np.asarray(mean, dtype=float) - gammaln(k_arr + 1.0)
    return float(out) if np.ndim(out) == 0 else out


def poisson_pmf(k, mean):
    return np.exp(poisson_logpmf(k, mean))


def _check_law(law: PureBirthLaw) -> None:
    if law.n0 < 1:
        raise DistributionError("n0", "Pure birth process needs n0 >= 1.")
    if law.rate < 0 or law.horizon < 0:
        raise DistributionError("rate", "Birth rate and horizon must be >= 0.")


def purebirth_total_logpmf(n, law: PureBirthLaw):
    """log P(N(t) = n) for the linear birth process, n >= n0."""
    _check_law(law)
    n_arr = np.asarray(n)
    if np.any(n_arr < law.n0):
        raise DistributionError("support", f"Population cannot be below n0={law.n0}.")
    births = n_arr - law.n0
    alpha_t = law.rate * law.horizon
    out = (
        gammaln(n_arr)
        - gammaln(law.n0)
        - gammaln(births + 1.0)
        - alpha_t * law.n0
        + xlogy(births, law.success_prob)
    )
    return float(out) if np.ndim(out) == 0 else out


def purebirth_total_pmf(n, law: PureBirthLaw):
    """C(n-1, n-n0) exp(-a t n0) (1 - exp(-a t))^(n-n0)."""
    return np.exp(purebirth_total_logpmf(n, law))


def purebirth_births_pmf(b, law: PureBirthLaw):
    """P(M(t) = b) for the number of births since time 0, NegBin(mu_t, n0)."""
    b_arr = _check_counts(b)
    return purebirth_total_pmf(b_arr + law.n0, law)


def chain_binomial_prob(y_prev, beta: float, population: float):
    """Infection probability 1 - eta**y_prev with eta = exp(-beta / N)."""
    return -np.expm1(-beta * np.asarray(y_prev, dtype=float) / population)


def chain_binomial_pmf(y_t, x_prev: int, y_prev: int, beta: float, population: float):
    """Reed-Frost transition probability P(Y_t = y_t | x_prev, y_prev)."""
    y_arr = _check_counts(y_t)
    if np.any(y_arr > x_prev):
        raise DistributionError(
            "support", f"New cases cannot exceed susceptibles ({x_prev})."
        )
    if beta < 0 or population <= 0:
        raise DistributionError("rate", "Need beta >= 0 and N > 0.")
    out = stats.binom.pmf(y_arr, x_prev, chain_binomial_prob(y_prev, beta, population))
    return float(out) if np.ndim(out) == 0 else out


def gamma_log_density(x, shape: float, rate: float):
    """Gamma(shape, rate) log density, used for random-effect precisions."""
    return stats.gamma.logpdf(x, a=shape, scale=1.0 / rate)


def sample_negbin(rng: np.random.Generator, mu, size) -> np.ndarray:
    """Gamma-Poisson draws. size = inf draws Poisson; size = 0 draws zero."""
    mu = np.asarray(mu, dtype=float)
    size = np.broadcast_to(np.asarray(size, dtype=float), mu.shape)
    finite = np.isfinite(size) & (size > 0)
    safe_size = np.where(finite, size, 1.0)
    rate = np.where(finite, rng.gamma(safe_size, 1.0) * (mu / safe_size), mu)
    rate = np.where((size == 0), 0.0, rate)
    if not np.all(np.isfinite(rate)) or np.any(rate > POISSON_MAX_RATE):
        raise DistributionError(
            "mean_too_large", "Negative binomial mean is too large to sample."
        )
    return rng.poisson(rate)
