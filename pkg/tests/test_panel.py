from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from epicount.errors import PanelError, SpatialError
from epicount.panel import (
    UNREACHABLE,
    align_spatial,
    graph_order,
    load_panel,
    load_spatial,
    make_panel,
    make_spatial,
    panel_frame,
    spatial_to_json,
    write_panel,
)


def write_csv(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


@pytest.fixture
def pop_csv(tmp_path) -> Path:
    return write_csv(tmp_path / "pop.csv", "area,population\nx,100\ny,200\n")


def test_load_all_zero_panel(tmp_path, pop_csv):
    counts = write_csv(
        tmp_path / "counts.csv",
        "area,time,count\nx,1,0\nx,2,0\nx,3,0\ny,1,0\ny,2,0\ny,3,0\n",
    )
    panel = load_panel(counts, pop_csv)
    assert panel.areas == ("x", "y")
    assert panel.n_times == 3
    assert panel.counts.sum() == 0
    assert list(panel.populations) == [100, 200]


def test_load_rebases_times(tmp_path, pop_csv):
    counts = write_csv(
        tmp_path / "counts.csv",
        "area,time,count\nx,12,1\nx,10,3\nx,11,2\ny,10,4\ny,11,5\ny,12,6\n",
    )
    panel = load_panel(counts, pop_csv)
    assert panel.counts.tolist() == [[3, 2, 1], [4, 5, 6]]


def test_load_negative_count(tmp_path, pop_csv):
    counts = write_csv(
        tmp_path / "counts.csv", "area,time,count\nx,1,0\nx,2,-1\ny,1,0\ny,2,0\n"
    )
    with pytest.raises(PanelError) as ex:
        load_panel(counts, pop_csv)
    assert ex.value.code == "negative_count"
    assert ex.value.area == "x"
    assert ex.value.time == 2


def test_load_duplicate_row(tmp_path, pop_csv):
    counts = write_csv(
        tmp_path / "counts.csv",
        "area,time,count\nx,1,0\nx,1,2\nx,2,0\ny,1,0\ny,2,0\n",
    )
    with pytest.raises(PanelError) as ex:
        load_panel(counts, pop_csv)
    assert ex.value.code == "duplicate_row"
    assert ex.value.area == "x"
    assert ex.value.time == 1


def test_load_ragged(tmp_path, pop_csv):
    counts = write_csv(
        tmp_path / "counts.csv", "area,time,count\nx,1,0\nx,2,0\ny,1,0\n"
    )
    with pytest.raises(PanelError) as ex:
        load_panel(counts, pop_csv)
    assert ex.value.code == "ragged"
    assert ex.value.area == "y"
    assert ex.value.time == 2


def test_load_unknown_area_in_metadata(tmp_path):
    counts = write_csv(tmp_path / "counts.csv", "area,time,count\nx,1,0\nx,2,1\n")
    pops = write_csv(tmp_path / "pop.csv", "area,population\nx,100\nz,5\n")
    with pytest.raises(PanelError) as ex:
        load_panel(counts, pops)
    assert ex.value.code == "unknown_area"
    assert ex.value.area == "z"


def test_load_missing_file(tmp_path, pop_csv):
    with pytest.raises(PanelError) as ex:
        load_panel(tmp_path / "nope.csv", pop_csv)
    assert ex.value.code == "missing_file"


def test_load_bad_header(tmp_path, pop_csv):
    counts = write_csv(tmp_path / "counts.csv", "area,week,count\nx,1,0\n")
    with pytest.raises(PanelError) as ex:
        load_panel(counts, pop_csv)
    assert ex.value.code == "schema"


def test_load_non_integer_count(tmp_path, pop_csv):
    counts = write_csv(tmp_path / "counts.csv", "area,time,count\nx,1,1.5\n")
    with pytest.raises(PanelError) as ex:
        load_panel(counts, pop_csv)
    assert ex.value.code == "schema"


def test_load_counts_not_utf8(tmp_path, pop_csv):
    counts = tmp_path / "counts.csv"
    counts.write_bytes(b"\xff\xfearea,time,count\nx,1,0\n")
    with pytest.raises(PanelError) as ex:
        load_panel(counts, pop_csv)
    assert ex.value.code == "encoding"
    assert ex.value.path == str(counts)


def test_load_per_time_populations(tmp_path):
    counts = write_csv(
        tmp_path / "counts.csv", "area,time,count\nx,1,0\nx,2,1\n"
    )
    pops = write_csv(
        tmp_path / "pop.csv", "area,time,population\nx,1,100\nx,2,110\n"
    )
    panel = load_panel(counts, pops)
    assert panel.populations.tolist() == [[100, 110]]
    assert panel.population_at(2).tolist() == [110.0]


def test_load_births(tmp_path, pop_csv):
    counts = write_csv(
        tmp_path / "counts.csv", "area,time,count\nx,1,0\nx,2,1\ny,1,2\ny,2,3\n"
    )
    births = write_csv(
        tmp_path / "births.csv", "area,time,births\nx,1,5\nx,2,6\ny,1,7\ny,2,8\n"
    )
    panel = load_panel(counts, pop_csv, births, period=26, maternal_lag=1)
    assert panel.births.tolist() == [[5, 6], [7, 8]]
    assert panel.period == 26
    assert panel.maternal_lag == 1


def test_write_then_load_gives_same_panel(tmp_path, small_panel):
    counts, pops, births = (
        tmp_path / "c.csv",
        tmp_path / "p.csv",
        tmp_path / "b.csv",
    )
    write_panel(small_panel, counts, pops, births)
    loaded = load_panel(counts, pops, births, period=small_panel.period)
    assert loaded.areas == small_panel.areas
    assert np.array_equal(loaded.counts, small_panel.counts)
    assert np.array_equal(loaded.populations, small_panel.populations)
    assert np.array_equal(loaded.births, small_panel.births)


def test_make_panel_rejects_bad_population():
    with pytest.raises(PanelError) as ex:
        make_panel(["x", "y"], [[0, 1], [1, 0]], [100, 0])
    assert ex.value.code == "bad_population"
    assert ex.value.area == "y"


def test_make_panel_rejects_births_shape():
    with pytest.raises(PanelError) as ex:
        make_panel(["x"], [[0, 1, 2]], [100], births=[[1, 1]])
    assert ex.value.code == "births_shape"


def test_make_panel_ragged_rows():
    with pytest.raises(PanelError) as ex:
        make_panel(["x", "y"], [[0, 1, 2], [1, 0]], [10, 10])
    assert ex.value.code == "ragged"
    assert ex.value.area == "y"


def test_panel_is_read_only(small_panel):
    with pytest.raises(ValueError):
        small_panel.counts[0, 0] = 7


def test_panel_frame_columns(small_panel):
    frame = panel_frame(small_panel)
    assert list(frame.columns) == ["area", "time", "count", "births"]
    assert len(frame) == 32


def test_graph_order_path():
    adj = [[0, 1, 0], [1, 0, 1], [0, 1, 0]]
    m = graph_order(adj)
    assert m[0, 2] == 2
    assert m[0, 1] == 1
    assert np.all(np.diag(m) == 0)


def test_graph_order_complete():
    adj = ~np.eye(4, dtype=bool)
    m = graph_order(adj)
    assert np.all(m[~np.eye(4, dtype=bool)] == 1)


def test_graph_order_disconnected():
    adj = np.zeros((4, 4), dtype=bool)
    adj[0, 1] = adj[1, 0] = True
    adj[2, 3] = adj[3, 2] = True
    m = graph_order(adj)
    assert m[0, 2] == UNREACHABLE
    assert m[3, 1] == UNREACHABLE
    assert m[2, 3] == 1


def test_graph_order_asymmetric():
    adj = [[0, 1], [0, 0]]
    with pytest.raises(SpatialError) as ex:
        graph_order(adj)
    assert ex.value.code == "asymmetric"


def test_graph_order_triangle_inequality():
    rng = np.random.default_rng(7)
    for _ in range(40):
        n = int(rng.integers(2, 9))
        upper = np.triu(rng.random((n, n)) < 0.35, k=1)
        adj = upper | upper.T
        m = graph_order(adj)
        assert np.array_equal(m == 1, adj)
        for j in range(n):
            via = m[:, j][:, None] + m[j, :][None, :]
            finite = np.isfinite(via)
            assert np.all(m[finite] <= via[finite])


def test_make_spatial_records_connectivity(line_spatial):
    assert line_spatial.connected is True
    assert line_spatial.graph_order[0, 3] == 3


def test_make_spatial_asymmetric_distances():
    with pytest.raises(SpatialError) as ex:
        make_spatial(["x", "y"], [[0, 1], [2, 0]])
    assert ex.value.code == "asymmetric"


@pytest.mark.parametrize(
    "kwargs",
    [
        {"distances": [[0, 1], [1]]},
        {"distances": [[0, "near"], [1, 0]]},
        {"adjacency": [[0, 1, 0], [1, 0]]},
    ],
    ids=["ragged_distances", "text_distance", "ragged_adjacency"],
)
def test_make_spatial_rejects_malformed_matrix(kwargs):
    with pytest.raises(SpatialError) as ex:
        make_spatial(["x", "y"], **kwargs)
    assert ex.value.code == "shape"


def test_load_spatial_needs_area_list(tmp_path):
    path = tmp_path / "spatial.json"
    path.write_text(json.dumps({"areas": "xy", "adjacency": [[0, 1], [1, 0]]}))
    with pytest.raises(SpatialError) as ex:
        load_spatial(path)
    assert ex.value.code == "schema"


def test_load_spatial(tmp_path, line_spatial):
    path = tmp_path / "spatial.json"
    path.write_text(spatial_to_json(line_spatial))
    loaded = load_spatial(path)
    assert loaded.areas == line_spatial.areas
    assert np.array_equal(loaded.distances, line_spatial.distances)
    assert np.array_equal(loaded.adjacency, line_spatial.adjacency)


def test_load_spatial_adjacency_only(tmp_path):
    path = tmp_path / "spatial.json"
    path.write_text(json.dumps({"areas": ["x", "y"], "adjacency": [[0, 1], [1, 0]]}))
    spatial = load_spatial(path)
    assert spatial.distances is None
    assert spatial.graph_order[0, 1] == 1


def test_align_spatial(line_spatial):
    aligned = align_spatial(line_spatial, ["d", "c", "b", "a"])
    assert aligned.areas == ("d", "c", "b", "a")
    assert aligned.distances[0, 3] == 3.0
    assert aligned.adjacency[0, 1]


def test_align_spatial_mismatch(line_spatial):
    with pytest.raises(SpatialError) as ex:
        align_spatial(line_spatial, ["a", "b", "c", "e"])
    assert ex.value.code == "area_mismatch"
