"""Bundled measles-like test data.

Seventeen districts observed weekly for two years. District centroids are
fixed; adjacency comes from a Delaunay triangulation of the mainland
centroids. The two island districts have no neighbors and report no cases.
Counts are simulated from an epidemic/endemic model with known parameters.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial import Delaunay

from epicount.mean_models import (
    COMPONENTS,
    EN,
    EeSpec,
    ParamVector,
    TsirSpec,
    params_from_mapping,
    spec_to_config,
)
from epicount.panel import (
    SpatialStructure,
    SurveillancePanel,
    make_panel,
    make_spatial,
    spatial_to_json,
    write_panel,
)
from epicount.simulate import simulate_ee

FIXTURE_SEED = 20240517
N_WEEKS = 104

DISTRICTS = (
    "Aurich",
    "Emden",
    "Leer",
    "Wittmund",
    "Friesland",
    "Wilhelmshaven",
    "Ammerland",
    "Oldenburg-Stadt",
    "Oldenburg-Land",
    "Cloppenburg",
    "Vechta",
    "Emsland",
    "Grafschaft",
    "Osnabrueck-Land",
    "Osnabrueck-Stadt",
    "Nordinsel",
    "Ostinsel",
)

# Centroids in km on a local grid.
CENTROIDS = (
    (22.0, 96.0),
    (8.0, 84.0),
    (18.0, 70.0),
    (44.0, 104.0),
    (58.0, 92.0),
    (74.0, 96.0),
    (56.0, 72.0),
    (78.0, 66.0),
    (90.0, 50.0),
    (54.0, 44.0),
    (82.0, 28.0),
    (20.0, 34.0),
    (6.0, 6.0),
    (60.0, 4.0),
    (84.0, 2.0),
    (24.0, 128.0),
    (62.0, 126.0),
)

POPULATIONS = (
    189000,
    51000,
    164000,
    57000,
    98000,
    76000,
    117000,
    162000,
    126000,
    158000,
    136000,
    313000,
    134000,
    353000,
    164000,
    9000,
    7000,
)

INITIAL_COUNTS = (2, 0, 1, 0, 1, 0, 0, 3, 1, 2, 0, 4, 1, 2, 1, 0, 0)

ISLANDS = (15, 16)

FIXTURE_SPEC = EeSpec(
    components=frozenset(COMPONENTS),
    random_effect_blocks=frozenset({EN}),
    endemic_trend=True,
    seasonal=True,
    period=52,
    weight_kind="graph_power_law",
)

TSIR_SPEC = TsirSpec(
    include_endemic=True,
    fit_tau=False,
    alpha_bounds=(0.95, 1.0),
    seasonal=True,
    trend=False,
    period=52,
    weight_kind="distance_power_law",
)


class Fixture(NamedTuple):
    panel: SurveillancePanel
    spatial: SpatialStructure
    spec: EeSpec
    truth: ParamVector


def fixture_spatial() -> SpatialStructure:
    points = np.array(CENTROIDS)
    diff = points[:, None, :] - points[None, :, :]
    distances = np.sqrt(np.sum(diff**2, axis=-1))
    n = len(DISTRICTS)
    mainland = [i for i in range(n) if i not in ISLANDS]
    adjacency = np.zeros((n, n), dtype=bool)
    tri = Delaunay(points[mainland])
    for simplex in tri.simplices:
        for a in simplex:
            for b in simplex:
                if a != b:
                    adjacency[mainland[a], mainland[b]] = True
    return make_spatial(DISTRICTS, distances.round(3), adjacency)


def fixture_truth(spec: EeSpec = FIXTURE_SPEC) -> ParamVector:
    rng = np.random.default_rng(FIXTURE_SEED)
    sigma_en = 0.3
    b_en = rng.normal(0.0, sigma_en, size=len(DISTRICTS))
    b_en[list(ISLANDS)] = -30.0
    truth = {
        "lambda_ar": -1.2,
        "lambda_ne": -1.0,
        "beta0_en": math.log(2e-6),
        "beta1_en": 0.0,
        "gamma_seas": 0.5,
        "delta_seas": 0.5,
        "logit_theta": math.log(0.9 / 0.1),
        "log_phi": math.log(1.5),
        "log_sigma_en": math.log(sigma_en),
        "b_en": b_en,
    }
    return params_from_mapping(spec, DISTRICTS, truth)


def fixture_births(n_weeks: int = N_WEEKS) -> np.ndarray:
    rng = np.random.default_rng(FIXTURE_SEED + 1)
    weekly = np.array(POPULATIONS, dtype=float) * 0.011 / 52.0
    return rng.poisson(weekly[:, None], size=(len(DISTRICTS), n_weeks))


def measles_fixture(n_weeks: int = N_WEEKS) -> Fixture:
    """Deterministic fixture panel, spatial structure and generating parameters."""
    spatial = fixture_spatial()
    truth = fixture_truth()
    start = np.zeros((len(DISTRICTS), 1), dtype=np.int64)
    start[:, 0] = INITIAL_COUNTS
    init = make_panel(DISTRICTS, start, POPULATIONS, period=52)
    sim = simulate_ee(FIXTURE_SPEC, truth, init, spatial, n_weeks, FIXTURE_SEED)
    panel = make_panel(
        DISTRICTS,
        sim.counts,
        POPULATIONS,
        period=52,
        births=fixture_births(n_weeks),
        maternal_lag=0,
        notes=("simulated measles-like fixture",),
    )
    return Fixture(panel, spatial, FIXTURE_SPEC, truth)


def write_fixture(directory: Path | str) -> dict[str, Path]:
    """Write the fixture as CLI input files and return their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fixture = measles_fixture()
    paths = {
        "counts": directory / "counts.csv",
        "populations": directory / "populations.csv",
        "births": directory / "births.csv",
        "spatial": directory / "spatial.json",
        "ee": directory / "ee.json",
        "tsir": directory / "tsir.json",
    }
    write_panel(fixture.panel, paths["counts"], paths["populations"], paths["births"])
    paths["spatial"].write_text(spatial_to_json(fixture.spatial))
    paths["ee"].write_text(json.dumps(spec_to_config(fixture.spec), indent=2))
    paths["tsir"].write_text(json.dumps(spec_to_config(TSIR_SPEC), indent=2))
    return paths


def nonzero_areas(panel: SurveillancePanel) -> tuple[str, ...]:
    return tuple(a for a, row in zip(panel.areas, panel.counts) if row.any())

