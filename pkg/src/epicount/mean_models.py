"""Conditional means for the TSIR and epidemic/endemic (EE) model families.

Both families share a parameter layout mechanism: a spec determines an
ordered tuple of named blocks, and a ParamVector holds one flat array on the
transformed (unconstrained) scale. Means are evaluated for whole (area, time)
matrices at once, optionally with their Jacobian with respect to that array.

Transformed-scale conventions:

* ``logit_theta`` is logit(theta) for power-law weights, so rho = exp(.).
* ``log_phi`` is the log negative binomial size.
* ``log_sigma_*`` are log standard deviations of random-effect blocks.
* ``eta_alpha`` maps to alpha = lo + (hi - lo) * expit(eta_alpha).
"""

from __future__ import annotations

import math
from typing import Mapping, NamedTuple, Union

import numpy as np
from scipy.special import expit

from epicount.errors import ModelSpecError, ParameterError
from epicount.panel import SurveillancePanel
from epicount.weights import (
    DISTANCE_POWER_LAW,
    GRAPH_POWER_LAW,
    POWER_LAW_KINDS,
    SCHEME_KINDS,
    WeightMatrix,
    WeightScheme,
)

AR = "AR"
NE = "NE"
EN = "EN"
COMPONENTS = (AR, NE, EN)

ROLE_FIXED = "fixed"
ROLE_THETA = "logit_theta"
ROLE_ALPHA = "alpha"
ROLE_PHI = "log_phi"
ROLE_SIGMA = "log_sigma"
ROLE_RANDOM = "random"


class TsirSpec(NamedTuple):
    """TSIR mean with gravity-type neighbor term and seasonal AR rate."""

    include_endemic: bool = True
    fit_tau: bool = True
    tau1: float = 1.0
    tau2: float = 1.0
    alpha_bounds: tuple[float, float] = (0.95, 1.0)
    seasonal: bool = True
    trend: bool = True
    period: int | None = None
    weight_kind: str = DISTANCE_POWER_LAW

    @property
    def family(self) -> str:
        return "tsir"


class EeSpec(NamedTuple):
    """Epidemic/endemic mean: self-area, neighbor and endemic components."""

    components: frozenset = frozenset(COMPONENTS)
    random_effect_blocks: frozenset = frozenset(COMPONENTS)
    endemic_trend: bool = True
    seasonal: bool = True
    period: int | None = None
    weight_kind: str = GRAPH_POWER_LAW

    @property
    def family(self) -> str:
        return "ee"


ModelSpec = Union[TsirSpec, EeSpec]


class Block(NamedTuple):
    name: str
    size: int
    role: str
    component: str | None = None


class ParamLayout(NamedTuple):
    blocks: tuple[Block, ...]
    areas: tuple[str, ...]

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks)

    def has(self, name: str) -> bool:
        return any(b.name == name for b in self.blocks)

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise ParameterError("layout", f"No parameter block '{name}'.")

    def slice(self, name: str) -> slice:
        start = 0
        for b in self.blocks:
            if b.name == name:
                return slice(start, start + b.size)
            start += b.size
        raise ParameterError("layout", f"No parameter block '{name}'.")

    def index(self, name: str) -> int:
        return self.slice(name).start

    def labels(self) -> list[str]:
        out = []
        for b in self.blocks:
            if b.role == ROLE_RANDOM:
                out.extend(f"{b.name}[{a}]" for a in self.areas)
            else:
                out.append(b.name)
        return out

    def roles(self) -> list[str]:
        out = []
        for b in self.blocks:
            out.extend([b.role] * b.size)
        return out


class ParamVector(NamedTuple):
    layout: ParamLayout
    values: np.ndarray

    def get(self, name: str):
        sl = self.layout.slice(name)
        if sl.stop - sl.start == 1 and self.layout.block(name).role != ROLE_RANDOM:
            return float(self.values[sl.start])
        return self.values[sl]

    def has(self, name: str) -> bool:
        return self.layout.has(name)

    def with_values(self, values) -> ParamVector:
        values = np.array(values, dtype=float)
        if values.shape != (self.layout.size,):
            raise ParameterError(
                "layout",
                f"Expected {self.layout.size} parameter values, got {values.shape}.",
            )
        return ParamVector(self.layout, values)

    def with_block(self, name: str, value) -> ParamVector:
        values = self.values.copy()
        values[self.layout.slice(name)] = value
        return ParamVector(self.layout, values)

    def to_dict(self) -> dict[str, float]:
        return dict(zip(self.layout.labels(), (float(v) for v in self.values)))

    def blocks_dict(self) -> dict:
        out: dict = {}
        for b in self.layout.blocks:
            value = self.get(b.name)
            out[b.name] = value.tolist() if isinstance(value, np.ndarray) else value
        return out


def validate_spec(spec: ModelSpec) -> ModelSpec:
    if spec.weight_kind not in SCHEME_KINDS:
        raise ModelSpecError(
            "weights", f"Unknown weight scheme '{spec.weight_kind}'."
        )
    if spec.period is not None and int(spec.period) < 1:
        raise ModelSpecError("period", "Seasonal period must be a positive integer.")
    if isinstance(spec, TsirSpec):
        lo, hi = spec.alpha_bounds
        if not (0.0 < lo <= hi <= 1.0):
            raise ModelSpecError(
                "alpha_bounds", "alpha_bounds must satisfy 0 < lo <= hi <= 1."
            )
        if not (math.isfinite(spec.tau1) and math.isfinite(spec.tau2)):
            raise ModelSpecError("tau", "Gravity exponents must be finite.")
        return spec
    if not spec.components or not set(spec.components) <= set(COMPONENTS):
        raise ModelSpecError(
            "components", "Enable at least one of the AR, NE and EN components."
        )
    if not set(spec.random_effect_blocks) <= set(spec.components):
        raise ModelSpecError(
            "random_effects",
            "Random effects are only allowed for enabled components.",
        )
    return spec


def param_layout(spec: ModelSpec, areas) -> ParamLayout:
    """Ordered parameter blocks implied by the spec (stable across runs)."""
    validate_spec(spec)
    areas = tuple(areas)
    n = len(areas)
    blocks: list[Block] = []
    if isinstance(spec, TsirSpec):
        blocks.append(Block("beta0_ar", 1, ROLE_FIXED, AR))
        if spec.trend:
            blocks.append(Block("beta1_ar", 1, ROLE_FIXED, AR))
        if spec.seasonal:
            blocks.append(Block("gamma_seas", 1, ROLE_FIXED, AR))
            blocks.append(Block("delta_seas", 1, ROLE_FIXED, AR))
        blocks.append(Block("lambda_ne", 1, ROLE_FIXED, NE))
        if spec.include_endemic:
            blocks.append(Block("lambda_en", 1, ROLE_FIXED, EN))
        if spec.fit_tau:
            blocks.append(Block("tau1", 1, ROLE_FIXED, NE))
            blocks.append(Block("tau2", 1, ROLE_FIXED, NE))
        lo, hi = spec.alpha_bounds
        if hi > lo:
            blocks.append(Block("eta_alpha", 1, ROLE_ALPHA))
        if spec.weight_kind in POWER_LAW_KINDS:
            blocks.append(Block("logit_theta", 1, ROLE_THETA, NE))
        blocks.append(Block("log_phi", 1, ROLE_PHI))
        return ParamLayout(tuple(blocks), areas)

    comps = spec.components
    if AR in comps:
        blocks.append(Block("lambda_ar", 1, ROLE_FIXED, AR))
    if NE in comps:
        blocks.append(Block("lambda_ne", 1, ROLE_FIXED, NE))
    if EN in comps:
        blocks.append(Block("beta0_en", 1, ROLE_FIXED, EN))
        if spec.endemic_trend:
            blocks.append(Block("beta1_en", 1, ROLE_FIXED, EN))
        if spec.seasonal:
            blocks.append(Block("gamma_seas", 1, ROLE_FIXED, EN))
            blocks.append(Block("delta_seas", 1, ROLE_FIXED, EN))
    if NE in comps and spec.weight_kind in POWER_LAW_KINDS:
        blocks.append(Block("logit_theta", 1, ROLE_THETA, NE))
    blocks.append(Block("log_phi", 1, ROLE_PHI))
    for comp in COMPONENTS:
        if comp in spec.random_effect_blocks:
            blocks.append(Block(f"log_sigma_{comp.lower()}", 1, ROLE_SIGMA, comp))
    for comp in COMPONENTS:
        if comp in spec.random_effect_blocks:
            blocks.append(Block(f"b_{comp.lower()}", n, ROLE_RANDOM, comp))
    return ParamLayout(tuple(blocks), areas)


def default_params(spec: ModelSpec, panel: SurveillancePanel) -> ParamVector:
    """Starting values derived from the panel's average incidence."""
    layout = param_layout(spec, panel.areas)
    mean_pop = float(np.mean(panel.population_matrix()))
    mean_rate = max(float(np.mean(panel.counts)), 0.1) / mean_pop
    start = {
        "beta0_ar": math.log(0.5),
        "lambda_ar": math.log(0.5),
        "lambda_en": math.log(mean_rate) - 1.0,
        "beta0_en": math.log(mean_rate) - 1.0,
        "tau1": spec.tau1 if isinstance(spec, TsirSpec) else 1.0,
        "tau2": spec.tau2 if isinstance(spec, TsirSpec) else 1.0,
        "log_sigma_ar": math.log(0.5),
        "log_sigma_ne": math.log(0.5),
        "log_sigma_en": math.log(0.5),
    }
    if isinstance(spec, TsirSpec):
        start["lambda_ne"] = math.log(0.1) - math.log(mean_pop)
    else:
        start["lambda_ne"] = math.log(0.1)
    values = np.zeros(layout.size)
    for b in layout.blocks:
        if b.name in start:
            values[layout.slice(b.name)] = start[b.name]
    return ParamVector(layout, values)


def params_from_mapping(
    spec: ModelSpec, areas, mapping: Mapping, base: ParamVector | None = None
) -> ParamVector:
    """Build a ParamVector from {block name: value or list} on the transformed scale."""
    layout = param_layout(spec, areas)
    values = np.zeros(layout.size) if base is None else base.values.copy()
    if not isinstance(mapping, Mapping):
        raise ParameterError("layout", "Parameters must be given as an object.")
    for name, value in mapping.items():
        if not layout.has(name):
            raise ParameterError("layout", f"Unknown parameter '{name}' for this model.")
        sl = layout.slice(name)
        try:
            arr = np.atleast_1d(np.asarray(value, dtype=float))
        except (TypeError, ValueError):
            raise ParameterError(
                "layout", f"Parameter '{name}' has an unusable value {value!r}."
            ) from None
        if arr.ndim != 1 or not np.all(np.isfinite(arr)):
            raise ParameterError(
                "layout", f"Parameter '{name}' must be a finite number or list."
            )
        if arr.size not in (1, sl.stop - sl.start):
            raise ParameterError(
                "layout", f"Parameter '{name}' needs {sl.stop - sl.start} value(s)."
            )
        values[sl] = arr
    return ParamVector(layout, values)


# --- natural-scale accessors ------------------------------------------------


def phi_of(params: ParamVector) -> float:
    return math.exp(params.get("log_phi"))


def theta_of(params: ParamVector) -> float | None:
    if not params.has("logit_theta"):
        return None
    return float(expit(params.get("logit_theta")))


def alpha_of(spec: TsirSpec, params: ParamVector) -> float:
    lo, hi = spec.alpha_bounds
    if not params.has("eta_alpha"):
        return hi
    return lo + (hi - lo) * float(expit(params.get("eta_alpha")))


def taus_of(spec: TsirSpec, params: ParamVector) -> tuple[float, float]:
    if params.has("tau1"):
        return params.get("tau1"), params.get("tau2")
    return spec.tau1, spec.tau2


def sigma_of(params: ParamVector, component: str) -> float:
    return math.exp(params.get(f"log_sigma_{component.lower()}"))


def weight_scheme_for(spec: ModelSpec, params: ParamVector) -> WeightScheme:
    """Weight scheme at the current decay parameter."""
    if spec.weight_kind not in POWER_LAW_KINDS:
        return WeightScheme(spec.weight_kind, None)
    if not params.has("logit_theta"):
        raise ParameterError("layout", "Power-law weights need a logit_theta block.")
    theta = theta_of(params)
    if not (0.0 < theta < 1.0):
        raise ParameterError("support", "theta is numerically outside (0, 1).")
    return WeightScheme(spec.weight_kind, theta)


def natural_params(spec: ModelSpec, params: ParamVector) -> dict[str, float]:
    """Scalar parameters on their natural scale, for reports."""
    out: dict[str, float] = {}
    for b in params.layout.blocks:
        if b.role == ROLE_FIXED:
            out[b.name] = params.get(b.name)
        elif b.role == ROLE_THETA:
            out["theta"] = theta_of(params)
            out["rho"] = math.exp(params.get(b.name))
        elif b.role == ROLE_ALPHA:
            out["alpha"] = alpha_of(spec, params)
        elif b.role == ROLE_PHI:
            out["phi"] = phi_of(params)
        elif b.role == ROLE_SIGMA:
            out[b.name.replace("log_", "")] = math.exp(params.get(b.name))
    if isinstance(spec, TsirSpec) and not params.has("eta_alpha"):
        out["alpha"] = spec.alpha_bounds[1]
    return out


# --- lagged data ------------------------------------------------------------


class LagData(NamedTuple):
    """Aligned lagged counts for times t in `times` (all >= 2).

    y is None for a forecast step beyond the panel.
    """

    y: np.ndarray | None
    y_lag: np.ndarray
    times: np.ndarray
    pop: np.ndarray
    period: int
    susceptible_ratio: np.ndarray | None = None


def lag_data(
    panel: SurveillancePanel,
    times=None,
    susceptibles: np.ndarray | None = None,
) -> LagData:
    """Collect y_t, y_{t-1} and N_t for the requested times (default 2..T).

    susceptibles, when given, is an (n, T) matrix x_{i,t}; the TSIR epidemic
    term is then scaled by x_{i,t-1} / N_i.
    """
    n_times = panel.n_times
    if times is None:
        times = np.arange(2, n_times + 1)
    times = np.atleast_1d(np.asarray(times, dtype=int))
    if np.any(times < 2) or np.any(times > n_times + 1):
        raise ParameterError(
            "time", f"Means exist for 2 <= t <= {n_times + 1}; got {times.tolist()}."
        )
    pop_all = panel.population_matrix()
    pop = pop_all[:, np.minimum(times, n_times) - 1]
    y_lag = panel.counts[:, times - 2].astype(float)
    y = None
    if np.all(times <= n_times):
        y = panel.counts[:, times - 1].astype(float)
    ratio = None
    if susceptibles is not None:
        sus = np.asarray(susceptibles, dtype=float)
        ratio = np.clip(sus[:, times - 2], 0.0, None) / pop
    return LagData(y, y_lag, times, pop, panel.period, ratio)


def _period(spec: ModelSpec, lag: LagData) -> int:
    return int(spec.period) if spec.period is not None else int(lag.period)


def _season(spec: ModelSpec, params: ParamVector, lag: LagData):
    """Seasonal term, sin and cos at the lag times (zeros when absent)."""
    omega = 2.0 * math.pi / _period(spec, lag)
    sin_t = np.sin(omega * lag.times)
    cos_t = np.cos(omega * lag.times)
    if not params.has("gamma_seas"):
        return np.zeros(lag.times.shape), sin_t, cos_t
    value = params.get("gamma_seas") * sin_t + params.get("delta_seas") * cos_t
    return value, sin_t, cos_t


# --- TSIR -------------------------------------------------------------------


def _tsir_parts(spec: TsirSpec, params: ParamVector, lag: LagData, w: np.ndarray):
    season, sin_t, cos_t = _season(spec, params, lag)
    lam_ar = params.get("beta0_ar") + season
    if params.has("beta1_ar"):
        lam_ar = lam_ar + params.get("beta1_ar") * lag.times
    rate_ar = np.exp(lam_ar)[None, :]

    tau1, tau2 = taus_of(spec, params)
    positive = lag.y_lag > 0
    log_y = np.log(np.where(positive, lag.y_lag, 1.0))
    y_pow = np.where(positive, np.exp(tau2 * log_y), 0.0)
    log_pop = np.log(lag.pop)
    gravity = np.exp(params.get("lambda_ne") + tau1 * log_pop)
    neighbor_sum = w @ y_pow

    ar_term = rate_ar * lag.y_lag
    ne_term = gravity * neighbor_sum
    force = ar_term + ne_term
    alpha = alpha_of(spec, params)
    active = force > 0
    log_force = np.log(np.where(active, force, 1.0))
    epidemic = np.where(active, np.exp(alpha * log_force), 0.0)
    ratio = 1.0 if lag.susceptible_ratio is None else lag.susceptible_ratio
    endemic = (
        lag.pop * math.exp(params.get("lambda_en"))
        if spec.include_endemic
        else np.zeros_like(lag.pop)
    )
    mu = epidemic * ratio + endemic
    return {
        "mu": mu,
        "ar_term": ar_term,
        "ne_term": ne_term,
        "gravity": gravity,
        "y_pow": y_pow,
        "log_y": log_y,
        "log_pop": log_pop,
        "log_force": log_force,
        "active": active,
        "epidemic": epidemic,
        "endemic": endemic,
        "ratio": ratio,
        "alpha": alpha,
        "sin": sin_t,
        "cos": cos_t,
    }


def tsir_mean_matrix(
    spec: TsirSpec, params: ParamVector, lag: LagData, w: WeightMatrix
) -> np.ndarray:
    """mu_it = [e^{lam_AR_t} y_{i,t-1} + e^{lam_NE} N_i^tau1 sum_j w_ij y_{j,t-1}^tau2]^alpha
    (times x_{i,t-1}/N_i when susceptibles are given) + N_i e^{lam_EN}."""
    return _tsir_parts(spec, params, lag, w.w)["mu"]


def tsir_mean_jacobian(
    spec: TsirSpec,
    params: ParamVector,
    lag: LagData,
    w: WeightMatrix,
    dw: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """TSIR means and d mu / d params, shape (P, n, K)."""
    parts = _tsir_parts(spec, params, lag, w.w)
    layout = params.layout
    mu = parts["mu"]
    jac = np.zeros((layout.size, *mu.shape))
    alpha = parts["alpha"]
    active = parts["active"]
    ratio = parts["ratio"]
    # d epidemic / d force, zero where the force is zero.
    d_force = np.where(
        active, alpha * np.exp((alpha - 1.0) * parts["log_force"]), 0.0
    ) * ratio
    ar_term = parts["ar_term"]
    jac[layout.index("beta0_ar")] = d_force * ar_term
    if layout.has("beta1_ar"):
        jac[layout.index("beta1_ar")] = d_force * ar_term * lag.times
    if layout.has("gamma_seas"):
        jac[layout.index("gamma_seas")] = d_force * ar_term * parts["sin"]
        jac[layout.index("delta_seas")] = d_force * ar_term * parts["cos"]
    ne_term = parts["ne_term"]
    jac[layout.index("lambda_ne")] = d_force * ne_term
    if layout.has("lambda_en"):
        jac[layout.index("lambda_en")] = parts["endemic"]
    if layout.has("tau1"):
        jac[layout.index("tau1")] = d_force * ne_term * parts["log_pop"]
        weighted_log = w.w @ (parts["y_pow"] * parts["log_y"])
        jac[layout.index("tau2")] = d_force * parts["gravity"] * weighted_log
    if layout.has("eta_alpha"):
        lo, hi = spec.alpha_bounds
        s = float(expit(params.get("eta_alpha")))
        d_alpha = (hi - lo) * s * (1.0 - s)
        jac[layout.index("eta_alpha")] = (
            parts["epidemic"] * parts["log_force"] * ratio * d_alpha
        )
    if layout.has("logit_theta"):
        jac[layout.index("logit_theta")] = d_force * parts["gravity"] * (
            dw @ parts["y_pow"]
        )
    return mu, jac


def tsir_mean(
    spec: TsirSpec,
    params: ParamVector,
    panel: SurveillancePanel,
    w: WeightMatrix,
    t: int,
    i: int,
    susceptibles: np.ndarray | None = None,
) -> float:
    """TSIR mean for area index i (0-based) at time t (1-based, t >= 2)."""
    if t < 2:
        raise ParameterError("time", "The mean at t = 1 has no lagged count.")
    lag = lag_data(panel, [t], susceptibles)
    assert np.all(lag.y_lag >= 0)  # noqa: S101
    return float(tsir_mean_matrix(spec, params, lag, w)[i, 0])


# --- epidemic/endemic -------------------------------------------------------


def _random_effect(params: ParamVector, comp: str, n: int) -> np.ndarray:
    name = f"b_{comp.lower()}"
    if params.has(name):
        return params.get(name)
    return np.zeros(n)


def ee_components(
    spec: EeSpec, params: ParamVector, lag: LagData, w: WeightMatrix
) -> dict[str, np.ndarray]:
    """Per-source means (AR, NE, EN), each (n, K); disabled ones are absent."""
    n = lag.y_lag.shape[0]
    out: dict[str, np.ndarray] = {}
    if AR in spec.components:
        rate = np.exp(params.get("lambda_ar") + _random_effect(params, AR, n))
        out[AR] = rate[:, None] * lag.y_lag
    if NE in spec.components:
        rate = np.exp(params.get("lambda_ne") + _random_effect(params, NE, n))
        out[NE] = rate[:, None] * (w.w @ lag.y_lag)
    if EN in spec.components:
        season, _, _ = _season(spec, params, lag)
        lam = params.get("beta0_en") + season
        if params.has("beta1_en"):
            lam = lam + params.get("beta1_en") * lag.times
        out[EN] = lag.pop * np.exp(lam[None, :] + _random_effect(params, EN, n)[:, None])
    return out


def ee_mean_matrix(
    spec: EeSpec, params: ParamVector, lag: LagData, w: WeightMatrix
) -> np.ndarray:
    """Sum of the enabled components."""
    parts = ee_components(spec, params, lag, w)
    mu = np.zeros(lag.y_lag.shape)
    for comp in COMPONENTS:
        if comp in parts:
            mu = mu + parts[comp]
    return mu


def ee_mean_jacobian(
    spec: EeSpec,
    params: ParamVector,
    lag: LagData,
    w: WeightMatrix,
    dw: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """EE means and d mu / d params, shape (P, n, K)."""
    parts = ee_components(spec, params, lag, w)
    layout = params.layout
    n = lag.y_lag.shape[0]
    rows = np.arange(n)
    mu = np.zeros(lag.y_lag.shape)
    for comp in COMPONENTS:
        if comp in parts:
            mu = mu + parts[comp]
    jac = np.zeros((layout.size, *mu.shape))

    if AR in parts:
        jac[layout.index("lambda_ar")] = parts[AR]
        if layout.has("b_ar"):
            jac[layout.slice("b_ar").start + rows, rows, :] = parts[AR]
    if NE in parts:
        jac[layout.index("lambda_ne")] = parts[NE]
        if layout.has("b_ne"):
            jac[layout.slice("b_ne").start + rows, rows, :] = parts[NE]
        if layout.has("logit_theta"):
            rate = np.exp(params.get("lambda_ne") + _random_effect(params, NE, n))
            jac[layout.index("logit_theta")] = rate[:, None] * (dw @ lag.y_lag)
    if EN in parts:
        en = parts[EN]
        jac[layout.index("beta0_en")] = en
        if layout.has("beta1_en"):
            jac[layout.index("beta1_en")] = en * lag.times
        if layout.has("gamma_seas"):
            _, sin_t, cos_t = _season(spec, params, lag)
            jac[layout.index("gamma_seas")] = en * sin_t
            jac[layout.index("delta_seas")] = en * cos_t
        if layout.has("b_en"):
            jac[layout.slice("b_en").start + rows, rows, :] = en
    return mu, jac


def ee_mean(
    spec: EeSpec,
    params: ParamVector,
    panel: SurveillancePanel,
    w: WeightMatrix,
    t: int,
    i: int,
) -> float:
    """EE mean for area index i (0-based) at time t (1-based, t >= 2)."""
    if t < 2:
        raise ParameterError("time", "The mean at t = 1 has no lagged count.")
    lag = lag_data(panel, [t])
    return float(ee_mean_matrix(spec, params, lag, w)[i, 0])


# --- family dispatch --------------------------------------------------------


def mean_matrix(
    spec: ModelSpec, params: ParamVector, lag: LagData, w: WeightMatrix
) -> np.ndarray:
    if isinstance(spec, TsirSpec):
        return tsir_mean_matrix(spec, params, lag, w)
    return ee_mean_matrix(spec, params, lag, w)


def mean_jacobian(
    spec: ModelSpec,
    params: ParamVector,
    lag: LagData,
    w: WeightMatrix,
    dw: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(spec, TsirSpec):
        return tsir_mean_jacobian(spec, params, lag, w, dw)
    return ee_mean_jacobian(spec, params, lag, w, dw)


# --- ecological aggregation -------------------------------------------------


class EcologicalMeans(NamedTuple):
    consistent: np.ndarray | float
    naive: np.ndarray | float


def ecological_aggregate_mean(
    alpha: float,
    beta: float,
    zbar,
    population,
    y_lag,
    alpha_star: float | None = None,
    beta_star: float | None = None,
) -> EcologicalMeans:
    """Aggregate-consistent AR mean for a binary individual covariate.

    The aggregate hazard is N_i [(1 - zbar) e^alpha + zbar e^(alpha + beta)],
    giving the mean hazard * y_lag / N_i. The naive mean plugs the area average
    into the individual model: exp(alpha* + beta* zbar) * y_lag, with alpha*
    and beta* defaulting to alpha and beta.
    """
    z = np.asarray(zbar, dtype=float)
    if np.any((z < 0) | (z > 1)) or np.any(~np.isfinite(z)):
        raise ParameterError("zbar", "Area covariate means must lie in [0, 1].")
    pop = np.asarray(population, dtype=float)
    y = np.asarray(y_lag, dtype=float)
    hazard = pop * ((1.0 - z) * math.exp(alpha) + z * math.exp(alpha + beta))
    consistent = hazard * y / pop
    a_star = alpha if alpha_star is None else alpha_star
    b_star = beta if beta_star is None else beta_star
    naive = np.exp(a_star + b_star * z) * y
    if np.ndim(consistent) == 0:
        return EcologicalMeans(float(consistent), float(naive))
    return EcologicalMeans(consistent, naive)


# --- config codec -----------------------------------------------------------

_TSIR_KEYS = {
    "include_endemic",
    "fit_tau",
    "tau1",
    "tau2",
    "alpha_bounds",
    "seasonal",
    "trend",
    "period",
    "weights",
}
_EE_KEYS = {
    "components",
    "random_effects",
    "endemic_trend",
    "seasonal",
    "period",
    "weights",
}
_SHARED_KEYS = {"model", "priors", "params"}


def _setting(config: Mapping, key: str, convert, default):
    value = config.get(key, default)
    if value is None:
        return None
    if convert is bool and not isinstance(value, bool):
        raise ModelSpecError("type", f"Config '{key}' must be true or false.")
    try:
        return convert(value)
    except (TypeError, ValueError):
        raise ModelSpecError(
            "type", f"Config '{key}' has an unusable value {value!r}."
        ) from None


def _names(config: Mapping, key: str, default) -> frozenset[str]:
    value = config.get(key, default)
    if isinstance(value, str) or not isinstance(value, (list, tuple, set, frozenset)):
        raise ModelSpecError("type", f"Config '{key}' must be a list of names.")
    return frozenset(str(c).upper() for c in value)


def spec_from_config(config: Mapping) -> ModelSpec:
    """Build a spec from a JSON config block.

    ``{"model": "ee", "components": ["AR", "NE", "EN"], "weights": ...}``;
    "priors" and "params" entries are left for the caller.
    """
    model = config.get("model")
    if model == "tsir":
        allowed = _TSIR_KEYS
    elif model == "ee":
        allowed = _EE_KEYS
    else:
        raise ModelSpecError("model", "Config 'model' must be 'tsir' or 'ee'.")
    unknown = sorted(set(config) - allowed - _SHARED_KEYS)
    if unknown:
        raise ModelSpecError(
            "unknown_key", "Unknown config key(s): {}.".format(", ".join(unknown))
        )
    period = _setting(config, "period", int, None)
    weights = _setting(config, "weights", str, None)
    if model == "tsir":
        defaults = TsirSpec()
        bounds = config.get("alpha_bounds", defaults.alpha_bounds)
        if isinstance(bounds, str) or not isinstance(bounds, (list, tuple)):
            raise ModelSpecError("type", "Config 'alpha_bounds' must be a list.")
        try:
            alpha_bounds = tuple(float(a) for a in bounds)
        except (TypeError, ValueError):
            raise ModelSpecError(
                "type", f"Config 'alpha_bounds' has an unusable value {bounds!r}."
            ) from None
        spec: ModelSpec = TsirSpec(
            include_endemic=_setting(
                config, "include_endemic", bool, defaults.include_endemic
            ),
            fit_tau=_setting(config, "fit_tau", bool, defaults.fit_tau),
            tau1=_setting(config, "tau1", float, defaults.tau1),
            tau2=_setting(config, "tau2", float, defaults.tau2),
            alpha_bounds=alpha_bounds,
            seasonal=_setting(config, "seasonal", bool, defaults.seasonal),
            trend=_setting(config, "trend", bool, defaults.trend),
            period=period,
            weight_kind=weights or defaults.weight_kind,
        )
    else:
        defaults_ee = EeSpec()
        spec = EeSpec(
            components=_names(config, "components", COMPONENTS),
            random_effect_blocks=_names(
                config, "random_effects", defaults_ee.random_effect_blocks
            ),
            endemic_trend=_setting(
                config, "endemic_trend", bool, defaults_ee.endemic_trend
            ),
            seasonal=_setting(config, "seasonal", bool, defaults_ee.seasonal),
            period=period,
            weight_kind=weights or defaults_ee.weight_kind,
        )
    return validate_spec(spec)


def spec_to_config(spec: ModelSpec) -> dict:
    if isinstance(spec, TsirSpec):
        return {
            "model": "tsir",
            "include_endemic": spec.include_endemic,
            "fit_tau": spec.fit_tau,
            "tau1": spec.tau1,
            "tau2": spec.tau2,
            "alpha_bounds": list(spec.alpha_bounds),
            "seasonal": spec.seasonal,
            "trend": spec.trend,
            "period": spec.period,
            "weights": spec.weight_kind,
        }
    return {
        "model": "ee",
        "components": [c for c in COMPONENTS if c in spec.components],
        "random_effects": [c for c in COMPONENTS if c in spec.random_effect_blocks],
        "endemic_trend": spec.endemic_trend,
        "seasonal": spec.seasonal,
        "period": spec.period,
        "weights": spec.weight_kind,
    }
