"""Normalized spatial coupling weights.

Power-law schemes take the decay parameter on the (0, 1) scale theta and use
rho = theta / (1 - theta) internally, so that w_ij is proportional to
d_ij**-rho (distances) or m_ij**-rho (graph order), each row summing to one.
"""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np

from epicount.errors import WeightError
from epicount.panel import SpatialStructure

_LOG = logging.getLogger(__name__)

DISTANCE_POWER_LAW = "distance_power_law"
GRAPH_POWER_LAW = "graph_power_law"
BINARY_CONTIGUITY = "binary_contiguity"
UNIFORM = "uniform"

POWER_LAW_KINDS = (DISTANCE_POWER_LAW, GRAPH_POWER_LAW)
SCHEME_KINDS = (DISTANCE_POWER_LAW, GRAPH_POWER_LAW, BINARY_CONTIGUITY, UNIFORM)


class WeightScheme(NamedTuple):
    kind: str
    theta: float | None = None

    @property
    def rho(self) -> float:
        return 0.0 if self.theta is None else rho_from_theta(self.theta)


class WeightMatrix(NamedTuple):
    """Row-normalized weights with a zero diagonal.

    zero_rows lists the areas with no reachable neighbor (all-zero rows).
    """

    w: np.ndarray
    scheme: WeightScheme
    zero_rows: tuple[int, ...] = ()


def rho_from_theta(theta: float) -> float:
    return theta / (1.0 - theta)


def make_scheme(kind: str, theta: float | None = None) -> WeightScheme:
    """Validate and build a WeightScheme."""
    if kind not in SCHEME_KINDS:
        raise WeightError(
            "bad_scheme",
            "Unknown weight scheme '{}'. Use one of: {}.".format(
                kind, ", ".join(SCHEME_KINDS)
            ),
        )
    if kind in POWER_LAW_KINDS:
        if theta is None or not (0.0 < float(theta) < 1.0):
            raise WeightError(
                "bad_scheme", f"Scheme '{kind}' needs theta strictly in (0, 1)."
            )
        return WeightScheme(kind, float(theta))
    if theta is not None:
        raise WeightError("bad_scheme", f"Scheme '{kind}' takes no theta.")
    return WeightScheme(kind, None)


def _log_decay(scheme: WeightScheme, spatial: SpatialStructure):
    """Log of the decay base and the mask of eligible (i, j) pairs."""
    n = spatial.n_areas
    off_diag = ~np.eye(n, dtype=bool)
    if scheme.kind == DISTANCE_POWER_LAW:
        if spatial.distances is None:
            raise WeightError(
                "bad_scheme", "Scheme 'distance_power_law' needs distances."
            )
        d = spatial.distances
        zero = np.argwhere(off_diag & (d == 0))
        if zero.size:
            i, j = zero[0]
            raise WeightError(
                "singular_decay",
                f"Zero distance between '{spatial.areas[i]}' and "
                f"'{spatial.areas[j]}' under a distance power law.",
            )
        with np.errstate(divide="ignore"):
            return np.where(off_diag, np.log(np.where(off_diag, d, 1.0)), 0.0), off_diag

    if spatial.graph_order is None:
        raise WeightError(
            "bad_scheme", f"Scheme '{scheme.kind}' needs an adjacency matrix."
        )
    m = spatial.graph_order
    mask = off_diag & np.isfinite(m)
    return np.where(mask, np.log(np.where(mask, m, 1.0)), 0.0), mask


def _normalize(raw: np.ndarray, scheme: WeightScheme) -> WeightMatrix:
    sums = raw.sum(axis=1, keepdims=True)
    empty = sums[:, 0] == 0
    w = np.divide(raw, sums, out=np.zeros_like(raw), where=sums > 0)
    zero_rows = tuple(int(i) for i in np.flatnonzero(empty))
    w.setflags(write=False)
    return WeightMatrix(w, scheme, zero_rows)


def _power_law(scheme: WeightScheme, spatial: SpatialStructure):
    log_base, mask = _log_decay(scheme, spatial)
    rho = scheme.rho
    z = np.where(mask, -rho * log_base, -np.inf)
    top = np.max(z, axis=1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    raw = np.where(mask, np.exp(z - top), 0.0)
    return raw, log_base, mask


def build_weights(scheme: WeightScheme, spatial: SpatialStructure) -> WeightMatrix:
    """Build the row-normalized weight matrix for a scheme."""
    n = spatial.n_areas
    if n < 2:
        raise WeightError("bad_scheme", "Weights need at least two areas.")

    if scheme.kind in POWER_LAW_KINDS:
        raw, _, _ = _power_law(scheme, spatial)
    elif scheme.kind == BINARY_CONTIGUITY:
        if spatial.graph_order is None:
            raise WeightError(
                "bad_scheme", "Scheme 'binary_contiguity' needs an adjacency matrix."
            )
        raw = (spatial.graph_order == 1).astype(float)
    elif scheme.kind == UNIFORM:
        raw = 1.0 - np.eye(n)
    else:
        raise WeightError("bad_scheme", f"Unknown weight scheme '{scheme.kind}'.")

    return _normalize(raw, scheme)


def weights_with_derivative(
    scheme: WeightScheme, spatial: SpatialStructure
) -> tuple[WeightMatrix, np.ndarray]:
    """Weights and their derivative with respect to logit(theta).

    Since rho = exp(logit(theta)), dw/dlogit(theta) = rho * dw/drho, and for a
    normalized power law dw_ij/drho = w_ij * (sum_k w_ik log b_ik - log b_ij).
    Schemes without a decay parameter return a zero derivative.
    """
    wm = build_weights(scheme, spatial)
    if scheme.kind not in POWER_LAW_KINDS:
        return wm, np.zeros_like(wm.w)
    _, log_base, mask = _power_law(scheme, spatial)
    w = wm.w
    mean_log = np.sum(np.where(mask, w * log_base, 0.0), axis=1, keepdims=True)
    d_rho = np.where(mask, w * (mean_log - log_base), 0.0)
    return wm, scheme.rho * d_rho


def zero_row_warnings(wm: WeightMatrix, areas) -> list[str]:
    """Log and return one warning per area with an all-zero weight row."""
    messages = []
    for i in wm.zero_rows:
        msg = (
            f"Area '{areas[i]}' has no reachable neighbor under "
            f"'{wm.scheme.kind}'; weight row is zero."
        )
        _LOG.warning(msg)
        messages.append(msg)
    return messages
