"""Forward simulation of the count models and of the small exact processes.

Seeds may be plain integers or numpy SeedSequence objects. Replicate i of a
batch started from seed S uses SeedSequence(S).spawn(R)[i].
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, NamedTuple, Union

import numpy as np
import pandas as pd

from epicount.distributions import chain_binomial_prob, sample_negbin
from epicount.errors import ParameterError
from epicount.inference import current_weights
from epicount.mean_models import (
    EeSpec,
    LagData,
    ModelSpec,
    ParamVector,
    TsirSpec,
    mean_matrix,
    phi_of,
    spec_to_config,
)
from epicount.panel import (
    SpatialStructure,
    SurveillancePanel,
    align_spatial,
    make_panel,
)
from epicount.underreporting import lagged_births

_LOG = logging.getLogger(__name__)

Seed = Union[int, np.random.SeedSequence]

LAGGED_COUNT = "lagged_count"
PHI = "phi"


class SimResult(NamedTuple):
    """Simulated counts plus latent states where the process has them.

    Model simulations give (n, T) matrices. Chain-binomial and latent-SIR runs
    give 1-d series indexed t = 0..T, with the initial state at index 0.
    """

    counts: np.ndarray
    susceptibles: np.ndarray | None = None
    prevalence: np.ndarray | None = None
    recoveries: np.ndarray | None = None
    extinct_at: int | None = None
    seed: object = None
    provenance: dict | None = None


class ReseedPoisson(NamedTuple):
    """Opt-in re-seeding: cells stuck at a structural zero draw Poisson(mean)."""

    mean: float

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.poisson(self.mean, size=n)


class SusceptibleSeries(NamedTuple):
    values: np.ndarray
    negative: tuple[tuple[str, int], ...]


def _seed_record(seed: Seed):
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": int(seed.entropy), "spawn_key": list(seed.spawn_key)}
    return int(seed)


def _simulate_counts(
    spec: ModelSpec,
    params: ParamVector,
    panel_init: SurveillancePanel,
    spatial: SpatialStructure | None,
    n_times: int,
    seed: Seed,
    size_fn: Callable[[np.ndarray, np.ndarray, float], np.ndarray],
    reseed: ReseedPoisson | None = None,
) -> tuple[np.ndarray, int | None]:
    if n_times < 1:
        raise ParameterError("horizon", "Simulation horizon must be >= 1.")
    phi = phi_of(params)
    if not (phi > 0) or math.isnan(phi):
        raise ParameterError("support", "Overdispersion must be positive.")
    if spatial is not None:
        spatial = align_spatial(spatial, panel_init.areas)
    wm, _ = current_weights(spec, params, panel_init.n_areas, spatial)
    pops = panel_init.population_matrix(n_times)
    rng = np.random.default_rng(seed)
    n = panel_init.n_areas
    counts = np.zeros((n, n_times), dtype=np.int64)
    counts[:, 0] = panel_init.counts[:, 0]
    for t in range(2, n_times + 1):
        y_lag = counts[:, t - 2].astype(float)
        lag = LagData(
            None, y_lag[:, None], np.array([t]), pops[:, t - 1 : t], panel_init.period
        )
        mu = mean_matrix(spec, params, lag, wm)[:, 0]
        if not np.all(np.isfinite(mu)):
            raise ParameterError("support", f"Non-finite mean at time {t}.", time=t)
        size = size_fn(y_lag, mu, phi)
        draw = sample_negbin(rng, mu, size)
        if reseed is not None:
            stuck = size == 0
            if np.any(stuck):
                draw[stuck] = reseed.draw(rng, int(np.sum(stuck)))
        counts[:, t - 1] = draw
    extinct_at = None
    totals = counts.sum(axis=0)
    nonzero = np.flatnonzero(totals)
    if totals[-1] == 0:
        extinct_at = int(nonzero[-1] + 2) if nonzero.size else 1
    return counts, extinct_at


def simulate_ee(
    spec: EeSpec,
    params: ParamVector,
    panel_init: SurveillancePanel,
    spatial: SpatialStructure | None,
    n_times: int,
    seed: Seed,
) -> SimResult:
    """Draw Y_it ~ NegBin(mu_it, phi) for t = 2..T from the panel's first column."""
    counts, extinct_at = _simulate_counts(
        spec,
        params,
        panel_init,
        spatial,
        n_times,
        seed,
        lambda y_lag, mu, phi: np.full(mu.shape, phi),
    )
    return SimResult(
        counts,
        extinct_at=extinct_at,
        seed=_seed_record(seed),
        provenance={"process": "ee", "spec": spec_to_config(spec), **params.blocks_dict()},
    )


def simulate_tsir(
    spec: TsirSpec,
    params: ParamVector,
    panel_init: SurveillancePanel,
    spatial: SpatialStructure | None,
    n_times: int,
    seed: Seed,
    overdispersion: str = PHI,
    reseed: ReseedPoisson | None = None,
) -> SimResult:
    """TSIR forward simulation.

    overdispersion="phi" uses the fitted size; "lagged_count" uses
    y_{i,t-1} as the size (classic TSIR). Under lagged_count a zero lagged
    count is a structural zero unless the endemic term is on, in which case
    the draw is Poisson(mu). reseed replaces structural zeros.
    """
    if overdispersion == PHI:

        def size_fn(y_lag, mu, phi):
            return np.full(mu.shape, phi)

    elif overdispersion == LAGGED_COUNT:
        fallback = np.inf if spec.include_endemic else 0.0

        def size_fn(y_lag, mu, phi):
            return np.where(y_lag > 0, y_lag, fallback)

    else:
        raise ParameterError(
            "overdispersion", "overdispersion must be 'phi' or 'lagged_count'."
        )
    counts, extinct_at = _simulate_counts(
        spec, params, panel_init, spatial, n_times, seed, size_fn, reseed
    )
    return SimResult(
        counts,
        extinct_at=extinct_at,
        seed=_seed_record(seed),
        provenance={
            "process": "tsir",
            "overdispersion": overdispersion,
            "reseed": None if reseed is None else reseed.mean,
            "spec": spec_to_config(spec),
            **params.blocks_dict(),
        },
    )


def simulate_purebirth_exact(n0: int, rate: float, horizon: float, seed: Seed) -> int:
    """Event-driven linear birth process; returns the population at the horizon."""
    if n0 < 1 or rate < 0 or horizon < 0:
        raise ParameterError("support", "Need n0 >= 1, rate >= 0 and horizon >= 0.")
    rng = np.random.default_rng(seed)
    size = int(n0)
    if rate == 0:
        return size
    clock = 0.0
    while True:
        clock += rng.exponential(1.0 / (size * rate))
        if clock > horizon:
            return size
        size += 1


def purebirth_replicates(
    n0: int, rate: float, horizon: float, reps: int, seed: Seed
) -> np.ndarray:
    """Many exact birth-process runs advanced together, one event per sweep."""
    if n0 < 1 or rate < 0 or horizon < 0:
        raise ParameterError("support", "Need n0 >= 1, rate >= 0 and horizon >= 0.")
    rng = np.random.default_rng(seed)
    sizes = np.full(reps, int(n0), dtype=np.int64)
    if rate == 0:
        return sizes
    clock = np.zeros(reps)
    active = np.ones(reps, dtype=bool)
    while np.any(active):
        idx = np.flatnonzero(active)
        clock[idx] += rng.exponential(1.0 / (sizes[idx] * rate))
        done = clock[idx] > horizon
        active[idx[done]] = False
        sizes[idx[~done]] += 1
    return sizes


def _check_closed(x0: int, y0: int, population: float) -> None:
    if x0 < 0 or y0 < 0 or x0 + y0 > population:
        raise ParameterError(
            "initial_state", "Need x0, y0 >= 0 and x0 + y0 <= N."
        )


def simulate_chain_binomial(
    x0: int, y0: int, beta: float, population: float, n_times: int, seed: Seed
) -> SimResult:
    """Reed-Frost chain binomial with escape probability exp(-beta / N) per infective.

    Series cover t = 0..T; after absorption (y_t = 0) the remaining steps are
    explicit zeros and extinct_at records the absorbing step.
    """
    _check_closed(x0, y0, population)
    if beta < 0:
        raise ParameterError("support", "beta must be >= 0.")
    rng = np.random.default_rng(seed)
    x = np.zeros(n_times + 1, dtype=np.int64)
    y = np.zeros(n_times + 1, dtype=np.int64)
    x[0], y[0] = x0, y0
    extinct_at = 0 if y0 == 0 else None
    for t in range(1, n_times + 1):
        if y[t - 1] == 0:
            x[t:] = x[t - 1]
            break
        y[t] = rng.binomial(x[t - 1], chain_binomial_prob(y[t - 1], beta, population))
        x[t] = x[t - 1] - y[t]
        if y[t] == 0 and extinct_at is None:
            extinct_at = t
    return SimResult(
        y,
        susceptibles=x,
        extinct_at=extinct_at,
        seed=_seed_record(seed),
        provenance={"process": "chain_binomial", "beta": beta, "population": population},
    )


def chain_binomial_path_probabilities(
    x0: int, y0: int, beta: float, population: float
) -> dict[tuple[int, ...], float]:
    """Exact probability of every case sequence (y_1, ..., y_k) up to absorption.

    Each path ends with its first zero, or when no susceptibles remain.
    Intended for small populations only.
    """
    _check_closed(x0, y0, population)
    paths: dict[tuple[int, ...], float] = {}

    def walk(x: int, y: int, prefix: tuple[int, ...], prob: float) -> None:
        if y == 0 or x == 0:
            paths[prefix] = paths.get(prefix, 0.0) + prob
            return
        p = float(chain_binomial_prob(y, beta, population))
        for k in range(x + 1):
            pk = math.comb(x, k) * p**k * (1.0 - p) ** (x - k)
            if pk == 0.0:
                continue
            walk(x - k, k, (*prefix, k), prob * pk)

    walk(x0, y0, (), 1.0)
    return paths


def chain_binomial_final_size_pmf(
    x0: int, y0: int, beta: float, population: float
) -> np.ndarray:
    """P(total new infections = k), k = 0..x0, by path enumeration."""
    pmf = np.zeros(x0 + 1)
    for path, prob in chain_binomial_path_probabilities(x0, y0, beta, population).items():
        pmf[sum(path)] += prob
    return pmf


def simulate_sir_latent(
    x0: int,
    i0: int,
    beta: float,
    gamma: float,
    population: float,
    n_times: int,
    seed: Seed,
) -> SimResult:
    """Binomial SIR with latent prevalence.

    Y_t ~ Bin(x_{t-1}, 1 - exp(-beta I_{t-1} / N)),
    Z_t ~ Bin(I_{t-1}, 1 - exp(-gamma)), I_t = I_{t-1} + Y_t - Z_t.
    """
    if x0 < 0 or i0 < 0 or x0 > population:
        raise ParameterError("initial_state", "Need 0 <= x0 <= N and i0 >= 0.")
    if beta < 0 or gamma < 0:
        raise ParameterError("support", "beta and gamma must be >= 0.")
    rng = np.random.default_rng(seed)
    x = np.zeros(n_times + 1, dtype=np.int64)
    y = np.zeros(n_times + 1, dtype=np.int64)
    z = np.zeros(n_times + 1, dtype=np.int64)
    prev = np.zeros(n_times + 1, dtype=np.int64)
    x[0], prev[0] = x0, i0
    recover_p = -math.expm1(-gamma)
    extinct_at = 0 if i0 == 0 else None
    for t in range(1, n_times + 1):
        infect_p = float(chain_binomial_prob(prev[t - 1], beta, population))
        y[t] = rng.binomial(x[t - 1], infect_p)
        z[t] = rng.binomial(prev[t - 1], recover_p)
        x[t] = x[t - 1] - y[t]
        prev[t] = prev[t - 1] + y[t] - z[t]
        if prev[t] == 0 and extinct_at is None:
            extinct_at = t
    r0 = beta / gamma if gamma > 0 else math.inf
    return SimResult(
        y,
        susceptibles=x,
        prevalence=prev,
        recoveries=z,
        extinct_at=extinct_at,
        seed=_seed_record(seed),
        provenance={
            "process": "sir_latent",
            "beta": beta,
            "gamma": gamma,
            "population": population,
            "R0": r0,
        },
    )


def reconstruct_susceptibles(
    panel: SurveillancePanel, reporting_rho: float = 1.0, xbar0=0.0
) -> SusceptibleSeries:
    """X_t = X_{t-1} - rho * y_t + B_{t-d} for t = 1..T, starting from X_0.

    Births before the first observed step take the value B_1.
    """
    births = lagged_births(panel)
    n = panel.n_areas
    cases = reporting_rho * panel.counts.astype(float)
    start = np.broadcast_to(np.asarray(xbar0, dtype=float), (n,))
    values = start[:, None] + np.cumsum(births - cases, axis=1)
    negative = tuple(
        (panel.areas[i], int(t + 1)) for i, t in np.argwhere(values < 0)
    )
    if negative:
        area, t = negative[0]
        _LOG.warning(
            "Reconstructed susceptibles are negative in %d cell(s), first at "
            "area '%s', time %d.",
            len(negative),
            area,
            t,
        )
    return SusceptibleSeries(values, negative)


def simulate_replicates(
    run: Callable[[np.random.SeedSequence], SimResult],
    reps: int,
    seed: int,
    threads: int = 1,
) -> list[SimResult]:
    """Run reps independent replicates; replicate i gets SeedSequence(seed).spawn(reps)[i]."""
    children = np.random.SeedSequence(seed).spawn(reps)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(run, children))


def sim_to_panel(sim: SimResult, panel_init: SurveillancePanel) -> SurveillancePanel:
    """Wrap simulated (n, T) counts as a panel with the initial panel's metadata."""
    n_times = sim.counts.shape[1]
    pops = panel_init.populations
    if pops.ndim == 2:
        pops = pops[:, :n_times]
    return make_panel(
        panel_init.areas,
        sim.counts,
        pops,
        panel_init.period,
        notes=(*panel_init.notes, "simulated"),
    )


def replicates_frame(results: list[SimResult], areas) -> pd.DataFrame:
    """Long-format rep, area, time, count table (reps numbered from 1)."""
    frames = []
    for rep, sim in enumerate(results, start=1):
        n, n_times = sim.counts.shape
        frames.append(
            pd.DataFrame(
                {
                    "rep": rep,
                    "area": np.repeat(np.array(list(areas), dtype=object), n_times),
                    "time": np.tile(np.arange(1, n_times + 1), n),
                    "count": sim.counts.reshape(-1),
                }
            )
        )
    return pd.concat(frames, ignore_index=True)
