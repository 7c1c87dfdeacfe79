"""Surveillance panels and spatial structure: types, validation and file I/O.

A panel holds incidence counts y[i][t] for n areas over T time steps (time is
a bare index 1..T with a declared number of periods per year), the area
populations and, optionally, births with a maternal-immunity lag.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import NamedTuple, Sequence

import networkx as nx
import numpy as np
import pandas as pd

from epicount.errors import PanelError, SpatialError

_LOG = logging.getLogger(__name__)

COUNTS_COLUMNS = ("area", "time", "count")
BIRTHS_COLUMNS = ("area", "time", "births")
POPULATION_COLUMNS = ("area", "population")
POPULATION_TIME_COLUMNS = ("area", "time", "population")

UNREACHABLE = np.inf


class SurveillancePanel(NamedTuple):
    """Areal count time series. Build with make_panel() or load_panel()."""

    areas: tuple[str, ...]
    counts: np.ndarray
    populations: np.ndarray
    period: int = 52
    births: np.ndarray | None = None
    maternal_lag: int = 0
    notes: tuple[str, ...] = ()

    @property
    def n_areas(self) -> int:
        return len(self.areas)

    @property
    def n_times(self) -> int:
        return int(self.counts.shape[1])

    def population_matrix(self, n_times: int | None = None) -> np.ndarray:
        """Populations as an (n, T) float matrix, broadcasting constant ones."""
        n_times = self.n_times if n_times is None else n_times
        if self.populations.ndim == 1:
            return np.repeat(
                self.populations.astype(float)[:, None], n_times, axis=1
            )
        if self.populations.shape[1] < n_times:
            raise PanelError(
                "bad_population",
                f"Per-time populations cover {self.populations.shape[1]} steps, "
                f"{n_times} needed.",
            )
        return self.populations[:, :n_times].astype(float)

    def population_at(self, t: int) -> np.ndarray:
        """Populations at time t (1-based)."""
        if self.populations.ndim == 1:
            return self.populations.astype(float)
        return self.populations[:, t - 1].astype(float)


class SpatialStructure(NamedTuple):
    """Pairwise distances, adjacency and the derived graph order."""

    areas: tuple[str, ...]
    distances: np.ndarray | None
    adjacency: np.ndarray | None
    graph_order: np.ndarray | None
    connected: bool | None

    @property
    def n_areas(self) -> int:
        return len(self.areas)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _int_matrix(
    rows, areas: Sequence[str], what: str, code_negative: str
) -> np.ndarray:
    if isinstance(rows, np.ndarray):
        mat = rows
    else:
        lengths = [len(r) for r in rows]
        if lengths and min(lengths) != max(lengths):
            t_expected = max(lengths)
            for area, length in zip(areas, lengths):
                if length != t_expected:
                    raise PanelError(
                        "ragged",
                        f"{what} for area '{area}' has {length} entries, "
                        f"expected {t_expected}.",
                        area=area,
                        time=length + 1,
                    )
        mat = np.asarray(rows)
    if mat.ndim != 2 or mat.shape[0] != len(areas):
        raise PanelError(
            "ragged",
            f"{what} must be a matrix with one row per area ({len(areas)}).",
        )
    if not np.issubdtype(mat.dtype, np.integer):
        as_float = mat.astype(float)
        if not np.all(np.isfinite(as_float)) or np.any(
            as_float != np.round(as_float)
        ):
            i, t = np.argwhere(~np.isfinite(as_float) | (as_float != np.round(as_float)))[0]
            raise PanelError(
                "schema",
                f"{what} must be integers (area '{areas[i]}', time {t + 1}).",
                area=areas[i],
                time=int(t + 1),
            )
    mat = mat.astype(np.int64)
    negative = np.argwhere(mat < 0)
    if negative.size:
        i, t = negative[0]
        raise PanelError(
            code_negative,
            f"Negative {what.lower()} {mat[i, t]} at area '{areas[i]}', "
            f"time {t + 1}.",
            area=areas[i],
            time=int(t + 1),
        )
    return mat


def make_panel(
    areas: Sequence[str],
    counts,
    populations,
    period: int = 52,
    births=None,
    maternal_lag: int = 0,
    notes: Sequence[str] = (),
) -> SurveillancePanel:
    """Validate inputs and build an immutable SurveillancePanel."""
    areas = tuple(str(a) for a in areas)
    if len(set(areas)) != len(areas):
        raise PanelError("duplicate_row", "Area identifiers must be unique.")
    if not areas:
        raise PanelError("schema", "A panel needs at least one area.")

    count_mat = _int_matrix(counts, areas, "Counts", "negative_count")
    n_times = count_mat.shape[1]
    if n_times < 1:
        raise PanelError("ragged", "A panel needs at least one time step.")

    pops = np.asarray(populations)
    if pops.ndim == 1:
        if pops.shape[0] != len(areas):
            raise PanelError(
                "bad_population", "Need one population per area."
            )
    elif pops.ndim != 2 or pops.shape != count_mat.shape:
        raise PanelError(
            "bad_population",
            "Per-time populations must have the same shape as the counts.",
        )
    if not np.issubdtype(pops.dtype, np.integer):
        if np.any(pops != np.round(pops)):
            raise PanelError("bad_population", "Populations must be integers.")
    pops = pops.astype(np.int64)
    low = np.argwhere(np.atleast_2d(pops.T).T < 1)
    if low.size:
        i = low[0][0]
        raise PanelError(
            "bad_population",
            f"Population for area '{areas[i]}' must be at least 1.",
            area=areas[i],
            time=int(low[0][1] + 1) if pops.ndim == 2 else None,
        )

    birth_mat = None
    if births is not None:
        birth_mat = _int_matrix(births, areas, "Births", "negative_count")
        if birth_mat.shape != count_mat.shape:
            raise PanelError(
                "births_shape",
                f"Births shape {birth_mat.shape} differs from counts "
                f"shape {count_mat.shape}.",
            )
        birth_mat = _frozen(birth_mat)

    if int(period) < 1:
        raise PanelError("schema", "Periods per year must be a positive integer.")
    if int(maternal_lag) < 0:
        raise PanelError("schema", "Maternal lag must be zero or positive.")

    return SurveillancePanel(
        areas,
        _frozen(count_mat),
        _frozen(pops),
        int(period),
        birth_mat,
        int(maternal_lag),
        tuple(notes),
    )


def _read_csv(path: Path, columns: Sequence[str]) -> pd.DataFrame:
    if not Path(path).exists():
        raise PanelError("missing_file", f"Cannot find '{path}'.", path=str(path))
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except UnicodeDecodeError:
        raise PanelError(
            "encoding", f"'{path}' is not valid UTF-8 text.", path=str(path)
        ) from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise PanelError(
            "schema", f"Cannot parse '{path}' as CSV: {exc}", path=str(path)
        ) from None
    df.columns = [str(c).strip() for c in df.columns]
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise PanelError(
            "schema",
            "Missing column(s) {} in '{}'.".format(", ".join(missing), path),
            path=str(path),
        )
    for col in columns:
        df[col] = df[col].str.strip()
    return df


def _int_column(df: pd.DataFrame, col: str, path: Path) -> pd.Series:
    ok = df[col].str.fullmatch(r"[+-]?\d+")
    if not ok.all():
        row = df[~ok].iloc[0]
        raise PanelError(
            "schema",
            "Value '{}' in column '{}' of '{}' is not an integer.".format(
                row[col], col, path
            ),
            area=row.get("area"),
            path=str(path),
        )
    return df[col].astype(np.int64)


def _check_duplicates(df: pd.DataFrame, keys: list[str], path: Path) -> None:
    dup = df.duplicated(keys, keep="first")
    if dup.any():
        row = df[dup].iloc[0]
        raise PanelError(
            "duplicate_row",
            "Duplicate row for {} in '{}'.".format(
                ", ".join(f"{k}={row[k]}" for k in keys), path
            ),
            area=str(row["area"]),
            time=int(row["time"]) if "time" in keys else None,
            path=str(path),
        )


def _long_to_matrix(
    df: pd.DataFrame,
    value_col: str,
    areas: list[str],
    times: list[int],
    path: Path,
) -> np.ndarray:
    area_idx = {a: i for i, a in enumerate(areas)}
    time_idx = {t: j for j, t in enumerate(times)}
    unknown = df[~df["area"].isin(area_idx)]
    if len(unknown):
        area = str(unknown.iloc[0]["area"])
        raise PanelError(
            "unknown_area",
            f"Area '{area}' in '{path}' does not appear in the counts.",
            area=area,
            path=str(path),
        )
    odd_times = df[~df["time"].isin(time_idx)]
    if len(odd_times):
        row = odd_times.iloc[0]
        raise PanelError(
            "ragged",
            f"Time {row['time']} in '{path}' does not appear in the counts.",
            area=str(row["area"]),
            time=int(row["time"]),
            path=str(path),
        )
    mat = np.full((len(areas), len(times)), -1, dtype=np.int64)
    mat[df["area"].map(area_idx).to_numpy(), df["time"].map(time_idx).to_numpy()] = (
        df[value_col].to_numpy()
    )
    holes = np.argwhere(mat < 0)
    if holes.size:
        i, j = holes[0]
        raise PanelError(
            "ragged",
            f"No {value_col} row for area '{areas[i]}' at time {times[j]} "
            f"in '{path}'.",
            area=areas[i],
            time=int(times[j]),
            path=str(path),
        )
    return mat


def load_panel(
    counts_path: Path | str,
    meta_path: Path | str,
    births_path: Path | str | None = None,
    period: int = 52,
    maternal_lag: int = 0,
) -> SurveillancePanel:
    """Load a panel from long-format CSV files.

    :param counts_path: CSV with header ``area,time,count``.
    :param meta_path: Populations CSV, ``area,population`` or
        ``area,time,population``.
    :param births_path: Optional CSV with header ``area,time,births``.
    :return: SurveillancePanel with times re-based to 1..T in sorted order.
    """
    counts_path = Path(counts_path)
    meta_path = Path(meta_path)

    df = _read_csv(counts_path, COUNTS_COLUMNS)
    df["time"] = _int_column(df, "time", counts_path)
    df["count"] = _int_column(df, "count", counts_path)
    _check_duplicates(df, ["area", "time"], counts_path)

    negative = df[df["count"] < 0]
    if len(negative):
        row = negative.iloc[0]
        raise PanelError(
            "negative_count",
            f"Negative count {row['count']} for area '{row['area']}' at "
            f"time {row['time']}.",
            area=str(row["area"]),
            time=int(row["time"]),
            path=str(counts_path),
        )

    areas = [str(a) for a in pd.unique(df["area"])]
    times = sorted(int(t) for t in pd.unique(df["time"]))
    counts = _long_to_matrix(df, "count", areas, times, counts_path)

    pop_df = _read_csv(meta_path, ("area", "population"))
    pop_df["population"] = _int_column(pop_df, "population", meta_path)
    if "time" in pop_df.columns:
        pop_df["time"] = _int_column(pop_df, "time", meta_path)
        _check_duplicates(pop_df, ["area", "time"], meta_path)
        populations = _long_to_matrix(pop_df, "population", areas, times, meta_path)
    else:
        _check_duplicates(pop_df, ["area"], meta_path)
        unknown = pop_df[~pop_df["area"].isin(areas)]
        if len(unknown):
            area = str(unknown.iloc[0]["area"])
            raise PanelError(
                "unknown_area",
                f"Area '{area}' in '{meta_path}' does not appear in the counts.",
                area=area,
                path=str(meta_path),
            )
        by_area = dict(zip(pop_df["area"], pop_df["population"]))
        absent = [a for a in areas if a not in by_area]
        if absent:
            raise PanelError(
                "unknown_area",
                f"No population for area '{absent[0]}' in '{meta_path}'.",
                area=absent[0],
                path=str(meta_path),
            )
        populations = np.array([by_area[a] for a in areas], dtype=np.int64)

    births = None
    if births_path is not None:
        births_path = Path(births_path)
        b_df = _read_csv(births_path, BIRTHS_COLUMNS)
        b_df["time"] = _int_column(b_df, "time", births_path)
        b_df["births"] = _int_column(b_df, "births", births_path)
        _check_duplicates(b_df, ["area", "time"], births_path)
        births = _long_to_matrix(b_df, "births", areas, times, births_path)

    _LOG.info(
        "Loaded panel '%s': %d areas, %d time steps.", counts_path, len(areas), len(times)
    )
    return make_panel(areas, counts, populations, period, births, maternal_lag)


def panel_frame(panel: SurveillancePanel) -> pd.DataFrame:
    """Long-format frame with columns area, time, count (and births)."""
    n, n_times = panel.counts.shape
    frame = pd.DataFrame(
        {
            "area": np.repeat(np.array(panel.areas, dtype=object), n_times),
            "time": np.tile(np.arange(1, n_times + 1), n),
            "count": panel.counts.reshape(-1),
        }
    )
    if panel.births is not None:
        frame["births"] = panel.births.reshape(-1)
    return frame


def write_panel(
    panel: SurveillancePanel,
    counts_path: Path | str,
    meta_path: Path | str,
    births_path: Path | str | None = None,
) -> None:
    """Write a panel as the long CSV files read by load_panel()."""
    frame = panel_frame(panel)
    frame[list(COUNTS_COLUMNS)].to_csv(counts_path, index=False, lineterminator="\n")
    if panel.populations.ndim == 1:
        pop = pd.DataFrame(
            {"area": list(panel.areas), "population": panel.populations}
        )
    else:
        pop = frame[["area", "time"]].copy()
        pop["population"] = panel.populations.reshape(-1)
    pop.to_csv(meta_path, index=False, lineterminator="\n")
    if births_path is not None:
        if panel.births is None:
            raise PanelError("missing_births", "Panel has no births to write.")
        frame[list(BIRTHS_COLUMNS)].to_csv(
            births_path, index=False, lineterminator="\n"
        )


def reorder_areas(panel: SurveillancePanel, order: Sequence[int]) -> SurveillancePanel:
    """Return the panel with rows permuted so that new row k is old row order[k]."""
    idx = np.asarray(order)
    return make_panel(
        [panel.areas[i] for i in idx],
        panel.counts[idx],
        panel.populations[idx],
        panel.period,
        None if panel.births is None else panel.births[idx],
        panel.maternal_lag,
        panel.notes,
    )


def graph_order(adjacency) -> np.ndarray:
    """All-pairs shortest path lengths (unit edges) of an adjacency matrix.

    Disconnected pairs get the UNREACHABLE (infinity) sentinel. Entries are
    integer valued, stored as floats so the sentinel fits.
    """
    adj = np.asarray(adjacency, dtype=bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise SpatialError("shape", "Adjacency must be a square matrix.")
    if np.any(adj != adj.T):
        i, j = np.argwhere(adj != adj.T)[0]
        raise SpatialError(
            "asymmetric", f"Adjacency is not symmetric at ({i + 1}, {j + 1})."
        )
    if np.any(np.diag(adj)):
        raise SpatialError("diagonal", "Adjacency diagonal must be false.")

    n = adj.shape[0]
    graph = nx.from_numpy_array(adj.astype(np.int8))
    order = np.full((n, n), UNREACHABLE)
    for source, lengths in nx.all_pairs_shortest_path_length(graph):
        for target, length in lengths.items():
            order[source, target] = float(length)
    return order


def _square(values, dtype, what: str, n: int) -> np.ndarray:
    try:
        mat = np.asarray(values, dtype=dtype)
    except (TypeError, ValueError):
        raise SpatialError("shape", f"{what} must be an {n} x {n} matrix.") from None
    if mat.shape != (n, n):
        raise SpatialError("shape", f"{what} must be {n} x {n}.")
    return mat


def make_spatial(
    areas: Sequence[str], distances=None, adjacency=None
) -> SpatialStructure:
    """Validate distances and/or adjacency and derive the graph order."""
    areas = tuple(str(a) for a in areas)
    n = len(areas)
    if distances is None and adjacency is None:
        raise SpatialError(
            "schema", "Spatial structure needs distances, adjacency, or both."
        )

    dist = None
    if distances is not None:
        dist = _square(distances, float, "Distances", n)
        if not np.all(np.isfinite(dist)) or np.any(dist < 0):
            raise SpatialError("schema", "Distances must be finite and >= 0.")
        if np.any(np.diag(dist) != 0):
            raise SpatialError("diagonal", "Distance diagonal must be zero.")
        if np.any(dist != dist.T):
            i, j = np.argwhere(dist != dist.T)[0]
            raise SpatialError(
                "asymmetric",
                f"Distances are not symmetric for '{areas[i]}', '{areas[j]}'.",
            )
        dist = _frozen(dist)

    adj = order = None
    connected = None
    if adjacency is not None:
        adj = _square(adjacency, bool, "Adjacency", n)
        order = graph_order(adj)
        connected = bool(np.all(np.isfinite(order)))
        if not connected:
            _LOG.info("Adjacency graph is not connected.")
        adj = _frozen(adj)
        order = _frozen(order)

    return SpatialStructure(areas, dist, adj, order, connected)


def load_spatial(path: Path | str) -> SpatialStructure:
    """Read the spatial JSON: {"areas": [...], "distances": ..., "adjacency": ...}."""
    path = Path(path)
    if not path.exists():
        raise SpatialError("missing_file", f"Cannot find '{path}'.", path=str(path))
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as ex:
        raise SpatialError("schema", f"Invalid JSON in '{path}': {ex}") from ex
    if not isinstance(data, dict) or not isinstance(data.get("areas"), list):
        raise SpatialError("schema", f"'{path}' needs an 'areas' list.", path=str(path))
    return make_spatial(data["areas"], data.get("distances"), data.get("adjacency"))


def spatial_to_json(spatial: SpatialStructure) -> str:
    data: dict = {"areas": list(spatial.areas)}
    if spatial.distances is not None:
        data["distances"] = spatial.distances.tolist()
    if spatial.adjacency is not None:
        data["adjacency"] = spatial.adjacency.astype(int).tolist()
    return json.dumps(data, indent=1)


def reorder_spatial(spatial: SpatialStructure, order: Sequence[int]) -> SpatialStructure:
    idx = np.asarray(order)
    return make_spatial(
        [spatial.areas[i] for i in idx],
        None if spatial.distances is None else spatial.distances[np.ix_(idx, idx)],
        None if spatial.adjacency is None else spatial.adjacency[np.ix_(idx, idx)],
    )


def align_spatial(spatial: SpatialStructure, areas: Sequence[str]) -> SpatialStructure:
    """Reorder a spatial structure to match the given area order."""
    if tuple(areas) == spatial.areas:
        return spatial
    missing = [a for a in areas if a not in spatial.areas]
    extra = [a for a in spatial.areas if a not in areas]
    if missing or extra:
        bad = (missing or extra)[0]
        raise SpatialError(
            "area_mismatch",
            f"Area '{bad}' is not shared by the panel and the spatial structure.",
            area=bad,
        )
    pos = {a: k for k, a in enumerate(spatial.areas)}
    return reorder_spatial(spatial, [pos[a] for a in areas])
