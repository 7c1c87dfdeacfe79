"""Likelihood, posterior, MAP fitting, sampling and prediction.

Parameters live on the transformed scale defined by mean_models.param_layout.
All public entry points take the spatial structure rather than a prebuilt
weight matrix, because power-law weights depend on the fitted decay.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Mapping, NamedTuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import digamma, expit

from epicount.distributions import gamma_log_density, negbin_logpmf_array, sample_negbin
from epicount.errors import EpicountError, ModelSpecError, ParameterError
from epicount.mean_models import (
    COMPONENTS,
    EN,
    NE,
    ROLE_ALPHA,
    ROLE_FIXED,
    ROLE_PHI,
    ROLE_SIGMA,
    ROLE_THETA,
    EeSpec,
    LagData,
    ModelSpec,
    ParamVector,
    TsirSpec,
    default_params,
    ee_components,
    lag_data,
    mean_jacobian,
    mean_matrix,
    param_layout,
    phi_of,
    weight_scheme_for,
)
from epicount.panel import SpatialStructure, SurveillancePanel, align_spatial
from epicount.sampler import RwmOptions, SampleBlock, rwm_sample, split_rhat
from epicount.weights import (
    WeightMatrix,
    WeightScheme,
    weights_with_derivative,
    zero_row_warnings,
)

_LOG = logging.getLogger(__name__)

QUANTILES = (0.025, 0.5, 0.975)
LOG_2PI = math.log(2.0 * math.pi)

# Objective value handed to the optimizer in place of +inf.
_INFEASIBLE = 1e300

# A component expected to add fewer cases than this over the whole panel is
# reported as a boundary solution.
BOUNDARY_CASES = 0.5

# Draws whose conditional means exceed this are numerically unusable.
MAX_DRAW_MEAN = 1e12


class PriorSpec(NamedTuple):
    """Prior hyperparameters; normal_sd_fixed may be inf for flat priors."""

    normal_sd_fixed: float = 10.0
    re_precision_shape: float = 0.5
    re_precision_rate: float = 0.1
    overdispersion_sd: float = 10.0


def validate_priors(priors: PriorSpec) -> PriorSpec:
    for name, value in priors._asdict().items():
        if not (value > 0) or math.isnan(value):
            raise ModelSpecError("priors", f"Prior '{name}' must be > 0.")
    return priors


def priors_from_config(config: Mapping | None) -> PriorSpec:
    if not config:
        return PriorSpec()
    if not isinstance(config, Mapping):
        raise ModelSpecError("priors", "Config 'priors' must be an object.")
    unknown = sorted(set(config) - set(PriorSpec._fields))
    if unknown:
        raise ModelSpecError(
            "unknown_key", "Unknown prior key(s): {}.".format(", ".join(unknown))
        )
    values = {}
    for key, value in config.items():
        try:
            values[key] = float(value)
        except (TypeError, ValueError):
            raise ModelSpecError(
                "priors", f"Prior '{key}' has an unusable value {value!r}."
            ) from None
    return validate_priors(PriorSpec(**values))


class FitOptions(NamedTuple):
    max_iter: int = 500
    gtol: float = 1e-3
    n_starts: int = 5
    seed: int = 0
    jitter: float = 0.5
    threads: int = 1
    n_laplace_draws: int = 500


class McmcOptions(NamedTuple):
    n_draws: int = 2000
    burn_in: int = 1000
    chains: int = 1
    thin: int = 1
    seed: int = 0
    initial_scale: float = 0.1
    threads: int = 1


class Bands(NamedTuple):
    """Quantiles (2.5, 50, 97.5 %) over draws, each (n, K)."""

    q025: np.ndarray
    q50: np.ndarray
    q975: np.ndarray

    def ordered(self) -> bool:
        return bool(np.all(self.q025 <= self.q50) and np.all(self.q50 <= self.q975))


class FitResult(NamedTuple):
    spec: ModelSpec
    priors: PriorSpec
    map_estimate: ParamVector
    std_errors: np.ndarray
    covariance: np.ndarray | None
    singular: tuple[str, ...]
    log_posterior: float
    log_likelihood: float
    aic: float
    gradient_norm: float
    converged: bool
    n_iter: int
    boundary: tuple[str, ...]
    times: np.ndarray
    fitted_mean: np.ndarray
    mean_bands: Bands
    predictive_bands: Bands
    draws: np.ndarray | None
    draw_source: str
    trace: np.ndarray
    start_values: np.ndarray
    acceptance: float | None = None
    rhat: np.ndarray | None = None
    warnings: tuple[str, ...] = ()

    @property
    def phi(self) -> float:
        return phi_of(self.map_estimate)


class PosteriorSample(NamedTuple):
    draws: np.ndarray
    log_posterior: np.ndarray
    acceptance: np.ndarray
    block_names: tuple[str, ...]
    rhat: np.ndarray | None
    stuck_blocks: tuple[str, ...]
    layout: object

    @property
    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.acceptance))

    @property
    def ok(self) -> bool:
        return not self.stuck_blocks


class Prediction(NamedTuple):
    time: int
    mean: np.ndarray
    q025: np.ndarray
    q50: np.ndarray
    q975: np.ndarray
    dropped: int = 0


class Residuals(NamedTuple):
    values: np.ndarray
    undefined: np.ndarray


# --- weights for the current parameters -------------------------------------


def _needs_weights(spec: ModelSpec) -> bool:
    return isinstance(spec, TsirSpec) or NE in spec.components


def current_weights(
    spec: ModelSpec,
    params: ParamVector,
    n_areas: int,
    spatial: SpatialStructure | None,
) -> tuple[WeightMatrix, np.ndarray]:
    """Weights at the current decay parameter and d w / d logit(theta)."""
    if n_areas < 2 or not _needs_weights(spec):
        zeros = np.zeros((n_areas, n_areas))
        scheme = WeightScheme(spec.weight_kind, None)
        return WeightMatrix(zeros, scheme, tuple(range(n_areas))), zeros
    scheme = weight_scheme_for(spec, params)
    if spatial is None:
        if scheme.kind == "uniform":
            w = (1.0 - np.eye(n_areas)) / (n_areas - 1)
            return WeightMatrix(w, scheme), np.zeros_like(w)
        raise ModelSpecError(
            "spatial", f"Weight scheme '{scheme.kind}' needs a spatial structure."
        )
    return weights_with_derivative(scheme, spatial)


class _Problem:
    """Panel, spec and priors bound together for repeated evaluation."""

    def __init__(
        self,
        spec: ModelSpec,
        priors: PriorSpec,
        panel: SurveillancePanel,
        spatial: SpatialStructure | None,
        susceptibles: np.ndarray | None = None,
    ) -> None:
        self.spec = spec
        self.priors = validate_priors(priors)
        self.panel = panel
        if spatial is not None:
            spatial = align_spatial(spatial, panel.areas)
        self.spatial = spatial
        self.layout = param_layout(spec, panel.areas)
        self.lag: LagData = lag_data(panel, susceptibles=susceptibles)
        self.susceptibles = susceptibles
        self._static_weights = None
        if not any(b.role == ROLE_THETA for b in self.layout.blocks):
            self._static_weights = current_weights(
                spec,
                ParamVector(self.layout, np.zeros(self.layout.size)),
                panel.n_areas,
                spatial,
            )

    def vector(self, x) -> ParamVector:
        return ParamVector(self.layout, np.asarray(x, dtype=float))

    def weights(self, params: ParamVector):
        if self._static_weights is not None:
            return self._static_weights
        return current_weights(self.spec, params, self.panel.n_areas, self.spatial)

    def loglik(self, x) -> float:
        params = self.vector(x)
        try:
            wm, _ = self.weights(params)
            mu = mean_matrix(self.spec, params, self.lag, wm)
            phi = phi_of(params)
        except (EpicountError, OverflowError):
            return -np.inf
        if not np.all(np.isfinite(mu)) or not np.isfinite(phi) or phi <= 0:
            return -np.inf
        value = float(np.sum(negbin_logpmf_array(self.lag.y, mu, phi)))
        return value if np.isfinite(value) else -np.inf

    def loglik_gradient(self, x) -> tuple[float, np.ndarray]:
        params = self.vector(x)
        grad = np.zeros(self.layout.size)
        try:
            wm, dw = self.weights(params)
            mu, jac = mean_jacobian(self.spec, params, self.lag, wm, dw)
            phi = phi_of(params)
        except (EpicountError, OverflowError):
            return -np.inf, grad
        y = self.lag.y
        if not np.all(np.isfinite(mu)) or not np.isfinite(phi) or phi <= 0:
            return -np.inf, grad
        value = float(np.sum(negbin_logpmf_array(y, mu, phi)))
        if not np.isfinite(value):
            return -np.inf, grad
        with np.errstate(divide="ignore", invalid="ignore"):
            d_mu = np.where(y > 0, y / mu, 0.0) - (y + phi) / (mu + phi)
        grad += np.tensordot(jac, d_mu, axes=([1, 2], [0, 1]))
        d_log_phi = phi * np.sum(
            digamma(y + phi)
            - digamma(phi)
            - np.log1p(mu / phi)
            + (mu - y) / (mu + phi)
        )
        grad[self.layout.index("log_phi")] += d_log_phi
        return value, grad

    def log_prior_gradient(self, x) -> tuple[float, np.ndarray]:
        return log_prior_gradient(self.spec, self.vector(x), self.priors)

    def value(self, x) -> float:
        lp, _ = self.log_prior_gradient(x)
        if not np.isfinite(lp):
            return -np.inf
        ll = self.loglik(x)
        return ll + lp if np.isfinite(ll) else -np.inf

    def value_and_grad(self, x) -> tuple[float, np.ndarray]:
        lp, g_prior = self.log_prior_gradient(x)
        ll, g_lik = self.loglik_gradient(x)
        if not (np.isfinite(lp) and np.isfinite(ll)):
            return -np.inf, np.zeros(self.layout.size)
        return ll + lp, g_lik + g_prior

    def objective(self, x) -> tuple[float, np.ndarray]:
        value, grad = self.value_and_grad(x)
        if not np.isfinite(value):
            return _INFEASIBLE, np.zeros_like(grad)
        return -value, -grad


# --- priors -----------------------------------------------------------------


def random_effect_log_prior(b, log_sigma: float) -> float:
    """sum_i log Normal(b_i; 0, sigma^2)."""
    b = np.asarray(b, dtype=float)
    n = b.size
    return float(
        -0.5 * n * LOG_2PI - n * log_sigma - 0.5 * np.sum(b**2) * math.exp(-2.0 * log_sigma)
    )


def precision_log_prior(precision: float, priors: PriorSpec) -> float:
    """Gamma(shape, rate) log density of a random-effect precision."""
    return float(
        gamma_log_density(precision, priors.re_precision_shape, priors.re_precision_rate)
    )


def _normal_terms(x: float, sd: float) -> tuple[float, float]:
    if math.isinf(sd):
        return 0.0, 0.0
    return -0.5 * (x / sd) ** 2 - math.log(sd) - 0.5 * LOG_2PI, -x / sd**2


def _logit_jacobian(eta: float) -> tuple[float, float]:
    """log s + log(1 - s) for s = expit(eta), and its derivative."""
    value = -float(np.logaddexp(0.0, -eta)) - float(np.logaddexp(0.0, eta))
    return value, 1.0 - 2.0 * float(expit(eta))


def log_prior_gradient(
    spec: ModelSpec, params: ParamVector, priors: PriorSpec
) -> tuple[float, np.ndarray]:
    """Log prior on the transformed scale (Jacobians included) and gradient.

    theta and alpha have uniform priors on their ranges; each log sigma carries
    the gamma prior of the precision exp(-2 log sigma) plus its Jacobian.
    """
    layout = params.layout
    grad = np.zeros(layout.size)
    total = 0.0
    for block in layout.blocks:
        sl = layout.slice(block.name)
        if block.role == ROLE_FIXED:
            value, g = _normal_terms(params.values[sl.start], priors.normal_sd_fixed)
        elif block.role == ROLE_PHI:
            value, g = _normal_terms(params.values[sl.start], priors.overdispersion_sd)
        elif block.role in (ROLE_THETA, ROLE_ALPHA):
            value, g = _logit_jacobian(params.values[sl.start])
        elif block.role == ROLE_SIGMA:
            s = params.values[sl.start]
            tau = math.exp(-2.0 * s)
            if not np.isfinite(tau) or tau == 0.0:
                return -np.inf, grad
            value = precision_log_prior(tau, priors) + math.log(2.0) - 2.0 * s
            g = -2.0 * priors.re_precision_shape + 2.0 * priors.re_precision_rate * tau
        else:  # ROLE_RANDOM
            sigma_name = f"log_sigma_{block.component.lower()}"
            s = params.get(sigma_name)
            b = params.values[sl]
            inv_var = math.exp(-2.0 * s)
            total += random_effect_log_prior(b, s)
            grad[sl] += -b * inv_var
            grad[layout.index(sigma_name)] += -b.size + float(np.sum(b**2)) * inv_var
            continue
        total += value
        grad[sl.start] += g
    if not np.isfinite(total):
        return -np.inf, grad
    return total, grad


def log_prior(spec: ModelSpec, params: ParamVector, priors: PriorSpec) -> float:
    return log_prior_gradient(spec, params, priors)[0]


# --- public likelihood API --------------------------------------------------


def loglik(
    spec: ModelSpec,
    params: ParamVector,
    panel: SurveillancePanel,
    spatial: SpatialStructure | None = None,
    susceptibles: np.ndarray | None = None,
) -> float:
    """sum over areas and t = 2..T of the negative binomial log-pmf.

    Out-of-support parameters give -inf.
    """
    problem = _Problem(spec, PriorSpec(), panel, spatial, susceptibles)
    return problem.loglik(params.values)


def cell_logliks(
    spec: ModelSpec,
    params: ParamVector,
    panel: SurveillancePanel,
    spatial: SpatialStructure | None = None,
) -> np.ndarray:
    """Per-cell log-pmf values (n, T-1) whose sum is loglik()."""
    problem = _Problem(spec, PriorSpec(), panel, spatial)
    wm, _ = problem.weights(params)
    mu = mean_matrix(spec, params, problem.lag, wm)
    return negbin_logpmf_array(problem.lag.y, mu, phi_of(params))


def logposterior(
    spec: ModelSpec,
    params: ParamVector,
    priors: PriorSpec,
    panel: SurveillancePanel,
    spatial: SpatialStructure | None = None,
    susceptibles: np.ndarray | None = None,
) -> float:
    problem = _Problem(spec, priors, panel, spatial, susceptibles)
    return problem.value(params.values)


def logposterior_gradient(
    spec: ModelSpec,
    params: ParamVector,
    priors: PriorSpec,
    panel: SurveillancePanel,
    spatial: SpatialStructure | None = None,
    susceptibles: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Log posterior and its analytic gradient on the transformed scale."""
    problem = _Problem(spec, priors, panel, spatial, susceptibles)
    return problem.value_and_grad(params.values)


def finite_difference_gradient(
    spec: ModelSpec,
    params: ParamVector,
    priors: PriorSpec,
    panel: SurveillancePanel,
    spatial: SpatialStructure | None = None,
    step: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of the log posterior."""
    problem = _Problem(spec, priors, panel, spatial)
    x = params.values
    grad = np.zeros_like(x)
    for k in range(x.size):
        h = step * max(1.0, abs(x[k]))
        up = x.copy()
        down = x.copy()
        up[k] += h
        down[k] -= h
        grad[k] = (problem.value(up) - problem.value(down)) / (2.0 * h)
    return grad


# --- MAP fitting ------------------------------------------------------------


class _StartResult(NamedTuple):
    x: np.ndarray
    value: float
    n_iter: int
    success: bool
    trace: np.ndarray


def _optimize(problem: _Problem, x0: np.ndarray, opts: FitOptions) -> _StartResult:
    trace: list[float] = []

    def record(xk):
        trace.append(problem.value(xk))

    res = minimize(
        problem.objective,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={"maxiter": opts.max_iter, "gtol": opts.gtol, "ftol": 1e-15},
    )
    value = problem.value(res.x)
    return _StartResult(res.x, value, int(res.nit), bool(res.success), np.array(trace))


def _start_points(problem: _Problem, x0: np.ndarray, opts: FitOptions):
    children = np.random.SeedSequence(opts.seed).spawn(opts.n_starts + 1)
    starts = [x0.copy()]
    for child in children[1 : opts.n_starts]:
        rng = np.random.default_rng(child)
        candidate = x0 + opts.jitter * rng.standard_normal(x0.size)
        if not np.isfinite(problem.value(candidate)):
            candidate = x0.copy()
        starts.append(candidate)
    return starts, children[-1]


def _hessian(problem: _Problem, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    p = x.size
    hess = np.zeros((p, p))
    for k in range(p):
        h = step * max(1.0, abs(x[k]))
        up = x.copy()
        down = x.copy()
        up[k] += h
        down[k] -= h
        hess[:, k] = (problem.value_and_grad(up)[1] - problem.value_and_grad(down)[1]) / (
            2.0 * h
        )
    return 0.5 * (hess + hess.T)


def _curvature(hess: np.ndarray, labels: list[str]):
    """Covariance and standard errors from -H; flag parameters on flat directions."""
    info = -hess
    if not np.all(np.isfinite(info)):
        return None, np.full(len(labels), np.nan), tuple(labels)
    try:
        chol = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        chol = None
    if chol is not None:
        cov = np.linalg.inv(info)
        return cov, np.sqrt(np.diag(cov)), ()
    eigval, eigvec = np.linalg.eigh(info)
    tol = 1e-10 * max(1.0, float(np.max(np.abs(eigval))))
    good = eigval > tol
    flat_load = np.sum(eigvec[:, ~good] ** 2, axis=1)
    singular_idx = np.flatnonzero(flat_load > 1e-2)
    cov = (eigvec[:, good] / eigval[good]) @ eigvec[:, good].T
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    se[singular_idx] = np.nan
    return None, se, tuple(labels[i] for i in singular_idx)


def _draw_factor(cov: np.ndarray) -> np.ndarray | None:
    """Cholesky factor for curvature draws, or None if cov is numerically unusable."""
    if not np.all(np.isfinite(cov)):
        return None
    try:
        return np.linalg.cholesky(cov + 1e-12 * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError:
        return None


def _boundary(problem: _Problem, params: ParamVector) -> tuple[str, ...]:
    """Components whose fitted contribution vanished, and extreme transforms."""
    out: list[str] = []
    spec = problem.spec
    wm, _ = problem.weights(params)
    if isinstance(spec, EeSpec):
        parts = ee_components(spec, params, problem.lag, wm)
        for comp in COMPONENTS:
            if comp in parts and float(np.sum(parts[comp])) < BOUNDARY_CASES:
                out.append(comp)
    elif spec.include_endemic:
        rate = problem.lag.pop * math.exp(params.get("lambda_en"))
        if float(np.sum(rate)) < BOUNDARY_CASES:
            out.append(EN)
    if params.has("logit_theta") and abs(params.get("logit_theta")) > 20:
        out.append("theta")
    if params.get("log_phi") > 20:
        out.append("phi")
    return tuple(out)


def mean_draws(
    spec: ModelSpec,
    draws: np.ndarray,
    layout,
    panel: SurveillancePanel,
    spatial: SpatialStructure | None,
    times=None,
    susceptibles: np.ndarray | None = None,
) -> np.ndarray:
    """Conditional means for every draw, shape (d, n, K)."""
    lag = lag_data(panel, times, susceptibles)
    out = np.empty((draws.shape[0], panel.n_areas, lag.times.size))
    for d, x in enumerate(draws):
        params = ParamVector(layout, x)
        wm, _ = current_weights(spec, params, panel.n_areas, spatial)
        out[d] = mean_matrix(spec, params, lag, wm)
    return out


class DrawSet(NamedTuple):
    draws: np.ndarray
    means: np.ndarray
    dropped: int


def usable_draws(
    spec: ModelSpec,
    draws: np.ndarray,
    layout,
    panel: SurveillancePanel,
    spatial: SpatialStructure | None,
    fallback: np.ndarray,
    times=None,
    susceptibles: np.ndarray | None = None,
) -> DrawSet:
    """Means for the draws that give finite, bounded means.

    Draws outside the parameter support (for example theta rounding to 1) or
    whose means overflow are dropped. When none survive, the fallback vector
    (normally the MAP) is used alone.
    """
    lag = lag_data(panel, times, susceptibles)
    kept: list[np.ndarray] = []
    means: list[np.ndarray] = []
    for x in np.atleast_2d(draws):
        if not np.all(np.isfinite(x)):
            continue
        params = ParamVector(layout, x)
        try:
            wm, _ = current_weights(spec, params, panel.n_areas, spatial)
            with np.errstate(over="ignore", invalid="ignore"):
                mu = mean_matrix(spec, params, lag, wm)
        except EpicountError:
            continue
        if not np.all(np.isfinite(mu)) or np.any(mu > MAX_DRAW_MEAN):
            continue
        kept.append(x)
        means.append(mu)
    dropped = len(np.atleast_2d(draws)) - len(kept)
    if not kept:
        params = ParamVector(layout, np.asarray(fallback, dtype=float))
        wm, _ = current_weights(spec, params, panel.n_areas, spatial)
        kept.append(params.values)
        means.append(mean_matrix(spec, params, lag, wm))
    return DrawSet(np.array(kept), np.array(means), dropped)


def _bands(samples: np.ndarray) -> Bands:
    q = np.quantile(samples, QUANTILES, axis=0)
    return Bands(q[0], q[1], q[2])


def _band_set(
    draw_set: DrawSet, layout, rng: np.random.Generator
) -> tuple[Bands, Bands]:
    mus = draw_set.means
    phis = np.exp(draw_set.draws[:, layout.index("log_phi")])[:, None, None]
    counts = sample_negbin(rng, mus, np.broadcast_to(phis, mus.shape))
    return _bands(mus), _bands(counts.astype(float))


def _dropped_warning(draw_set: DrawSet, total: int, what: str) -> str | None:
    if draw_set.dropped == 0:
        return None
    msg = (
        f"Dropped {draw_set.dropped} of {total} {what} draws with unusable "
        "parameters or overflowing means."
    )
    _LOG.warning(msg)
    return msg


def fit_map(
    spec: ModelSpec,
    priors: PriorSpec,
    panel: SurveillancePanel,
    spatial: SpatialStructure | None = None,
    opts: FitOptions | None = None,
    init: ParamVector | None = None,
    susceptibles: np.ndarray | None = None,
) -> FitResult:
    """Maximize the log posterior by L-BFGS-B from several jittered starts.

    The best start wins; equal objectives are broken by the lexicographically
    smallest parameter vector. Standard errors come from a finite-difference
    Hessian of the analytic gradient, and quantile bands from draws of the
    resulting normal approximation.
    """
    opts = opts or FitOptions()
    if panel.n_times < 3:
        raise ParameterError("too_short", "Fitting needs at least three time steps.")
    problem = _Problem(spec, priors, panel, spatial, susceptibles)
    x0 = (init if init is not None else default_params(spec, panel)).values
    if not np.isfinite(problem.value(x0)):
        raise ParameterError("support", "Starting values have zero posterior density.")

    starts, draw_seed = _start_points(problem, x0, opts)
    with ThreadPoolExecutor(max_workers=max(1, opts.threads)) as pool:
        results = list(pool.map(lambda s: _optimize(problem, s, opts), starts))
    best = min(
        (r for r in results if np.isfinite(r.value)),
        key=lambda r: (-r.value, tuple(r.x)),
        default=None,
    )
    if best is None:
        raise ParameterError("support", "No start reached a finite posterior value.")

    warnings: list[str] = []
    x = best.x
    params = problem.vector(x)
    if panel.n_areas > 1 and _needs_weights(spec):
        warnings.extend(zero_row_warnings(problem.weights(params)[0], panel.areas))
    value, grad = problem.value_and_grad(x)
    grad_norm = float(np.max(np.abs(grad)))
    converged = grad_norm <= opts.gtol
    if not converged:
        msg = f"Optimizer stopped with gradient norm {grad_norm:.3g} > {opts.gtol}."
        _LOG.warning(msg)
        warnings.append(msg)

    labels = problem.layout.labels()
    cov, se, singular = _curvature(_hessian(problem, x), labels)
    for name in singular:
        msg = f"Curvature is singular for parameter '{name}'."
        _LOG.warning(msg)
        warnings.append(msg)
    boundary = _boundary(problem, params)
    for name in boundary:
        msg = f"Boundary solution for '{name}'."
        _LOG.warning(msg)
        warnings.append(msg)

    rng = np.random.default_rng(draw_seed)
    if cov is not None and opts.n_laplace_draws > 0:
        chol = _draw_factor(cov)
    else:
        chol = None
    if chol is not None:
        draws = x + rng.standard_normal((opts.n_laplace_draws, x.size)) @ chol.T
        draw_source = "laplace"
    else:
        draws = x[None, :]
        draw_source = "map"
    draw_set = usable_draws(
        spec, draws, problem.layout, panel, problem.spatial, x, susceptibles=susceptibles
    )
    msg = _dropped_warning(draw_set, draws.shape[0], "curvature")
    if msg is not None:
        warnings.append(msg)
    if draw_set.dropped == draws.shape[0]:
        draw_source = "map"
    draws = draw_set.draws
    mean_bands, pred_bands = _band_set(draw_set, problem.layout, rng)
    wm, _ = problem.weights(params)
    fitted = mean_matrix(spec, params, problem.lag, wm)
    ll = problem.loglik(x)
    _LOG.info(
        "MAP fit: log posterior %.4f, log likelihood %.4f, %d iterations.",
        value,
        ll,
        best.n_iter,
    )
    return FitResult(
        spec=spec,
        priors=problem.priors,
        map_estimate=params,
        std_errors=se,
        covariance=cov,
        singular=singular,
        log_posterior=float(value),
        log_likelihood=float(ll),
        aic=float(-2.0 * ll + 2.0 * x.size),
        gradient_norm=grad_norm,
        converged=bool(converged),
        n_iter=best.n_iter,
        boundary=boundary,
        times=problem.lag.times,
        fitted_mean=fitted,
        mean_bands=mean_bands,
        predictive_bands=pred_bands,
        draws=draws if draw_source != "map" else None,
        draw_source=draw_source,
        trace=best.trace,
        start_values=np.array([r.value for r in results]),
        warnings=tuple(warnings),
    )


# --- posterior sampling -----------------------------------------------------


def sample_blocks(layout) -> list[SampleBlock]:
    blocks = []
    for block in layout.blocks:
        sl = layout.slice(block.name)
        blocks.append(SampleBlock(block.name, np.arange(sl.start, sl.stop)))
    return blocks


def sample_posterior(
    spec: ModelSpec,
    priors: PriorSpec,
    panel: SurveillancePanel,
    spatial: SpatialStructure | None,
    init: ParamVector,
    opts: McmcOptions | None = None,
) -> PosteriorSample:
    """Adaptive random-walk Metropolis, one block per parameter block.

    Chains are independent; chain c uses SeedSequence(seed).spawn(chains)[c].
    """
    opts = opts or McmcOptions()
    problem = _Problem(spec, priors, panel, spatial)
    blocks = sample_blocks(problem.layout)
    rwm_opts = RwmOptions(
        n_draws=opts.n_draws,
        burn_in=opts.burn_in,
        thin=opts.thin,
        initial_scale=opts.initial_scale,
    )
    children = np.random.SeedSequence(opts.seed).spawn(opts.chains)

    def run_chain(child):
        return rwm_sample(
            problem.value, init.values, blocks, rwm_opts, np.random.default_rng(child)
        )

    with ThreadPoolExecutor(max_workers=max(1, opts.threads)) as pool:
        chains = list(pool.map(run_chain, children))

    draws = np.stack([c.draws for c in chains])
    rhat = split_rhat(draws) if opts.n_draws >= 4 else None
    stuck = tuple(sorted({name for c in chains for name in c.stuck_blocks}))
    acceptance = np.stack([c.acceptance for c in chains])
    _LOG.info(
        "Sampled %d chain(s) x %d draws; mean acceptance %.3f.",
        opts.chains,
        opts.n_draws,
        float(np.mean(acceptance)),
    )
    return PosteriorSample(
        draws,
        np.stack([c.log_density for c in chains]),
        acceptance,
        tuple(b.name for b in blocks),
        rhat,
        stuck,
        problem.layout,
    )


def with_posterior(
    fit: FitResult,
    sample: PosteriorSample,
    panel: SurveillancePanel,
    spatial: SpatialStructure | None,
    seed: int = 0,
) -> FitResult:
    """Replace the curvature-based bands of a fit by bands from MCMC draws."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])
    draw_set = usable_draws(
        fit.spec, sample.flat, sample.layout, panel, spatial, fit.map_estimate.values
    )
    draws = draw_set.draws
    mean_bands, pred_bands = _band_set(draw_set, sample.layout, rng)
    warnings = list(fit.warnings)
    msg = _dropped_warning(draw_set, sample.flat.shape[0], "posterior")
    if msg is not None:
        warnings.append(msg)
    warnings.extend(
        f"Sampler block '{name}' accepted no proposals." for name in sample.stuck_blocks
    )
    return fit._replace(
        mean_bands=mean_bands,
        predictive_bands=pred_bands,
        draws=draws,
        draw_source="mcmc",
        acceptance=sample.acceptance_rate,
        rhat=sample.rhat,
        warnings=tuple(warnings),
    )


# --- prediction and residuals -----------------------------------------------


def predict_one_step(
    spec: ModelSpec,
    params: ParamVector,
    panel: SurveillancePanel,
    spatial: SpatialStructure | None,
    t: int,
    draws: np.ndarray | None = None,
) -> Prediction:
    """Per-area mean of mu_it and its 2.5/50/97.5 % quantiles over draws.

    Without draws every summary equals the plug-in mean. t = T + 1 is the
    one-step forecast.
    """
    if not (2 <= t <= panel.n_times + 1):
        raise ParameterError(
            "time", f"Prediction time must be in 2..{panel.n_times + 1}, got {t}."
        )
    if spatial is not None:
        spatial = align_spatial(spatial, panel.areas)
    dropped = 0
    if draws is None:
        samples = mean_draws(spec, params.values[None, :], params.layout, panel, spatial, [t])
    else:
        draw_set = usable_draws(
            spec, np.asarray(draws), params.layout, panel, spatial, params.values, [t]
        )
        _dropped_warning(draw_set, np.atleast_2d(draws).shape[0], "prediction")
        samples = draw_set.means
        dropped = draw_set.dropped
    samples = samples[:, :, 0]
    q = np.quantile(samples, QUANTILES, axis=0)
    return Prediction(t, samples.mean(axis=0), q[0], q[1], q[2], dropped)


def pearson_residuals(fit: FitResult, panel: SurveillancePanel) -> Residuals:
    """(y - mu) / sqrt(mu (1 + mu / phi)); cells with mu = 0 are undefined (nan)."""
    mu = fit.fitted_mean
    y = panel.counts[:, fit.times - 1].astype(float)
    phi = fit.phi
    undefined = mu <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        values = (y - mu) / np.sqrt(mu * (1.0 + mu / phi))
    values = np.where(undefined, np.nan, values)
    return Residuals(values, undefined)

