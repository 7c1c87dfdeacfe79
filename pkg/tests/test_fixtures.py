from __future__ import annotations

import json

import numpy as np
from epicount.fixtures import (
    DISTRICTS,
    ISLANDS,
    N_WEEKS,
    fixture_spatial,
    measles_fixture,
    nonzero_areas,
)
from epicount.mean_models import spec_from_config
from epicount.panel import load_panel, load_spatial


def test_fixture_shape(measles):
    panel = measles.panel
    assert panel.n_areas == len(DISTRICTS) == 17
    assert panel.n_times == N_WEEKS
    assert panel.births.shape == (17, N_WEEKS)
    assert measles.truth.layout.labels()[0] == "lambda_ar"


def test_islands_are_isolated_and_silent(measles):
    spatial = measles.spatial
    for i in ISLANDS:
        assert not spatial.adjacency[i].any()
        assert measles.panel.counts[i].sum() == 0
    assert not spatial.connected
    assert set(nonzero_areas(measles.panel)) <= set(DISTRICTS) - {
        DISTRICTS[i] for i in ISLANDS
    }


def test_mainland_is_connected():
    spatial = fixture_spatial()
    mainland = [i for i in range(17) if i not in ISLANDS]
    order = spatial.graph_order[np.ix_(mainland, mainland)]
    assert np.all(np.isfinite(order))


def test_fixture_is_deterministic(measles):
    again = measles_fixture()
    assert np.array_equal(again.panel.counts, measles.panel.counts)
    assert np.array_equal(again.panel.births, measles.panel.births)


def test_written_fixture_loads(fixture_dir, measles):
    panel = load_panel(
        fixture_dir["counts"], fixture_dir["populations"], fixture_dir["births"]
    )
    assert panel.areas == measles.panel.areas
    assert np.array_equal(panel.counts, measles.panel.counts)
    spatial = load_spatial(fixture_dir["spatial"])
    assert spatial.areas == measles.spatial.areas
    ee = spec_from_config(json.loads(fixture_dir["ee"].read_text()))
    assert ee == measles.spec
    tsir = spec_from_config(json.loads(fixture_dir["tsir"].read_text()))
    assert tsir.family == "tsir"
