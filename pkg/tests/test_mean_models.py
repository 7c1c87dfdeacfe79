from __future__ import annotations

import math

import numpy as np
import pytest
from epicount.errors import ModelSpecError, ParameterError
from epicount.mean_models import (
    AR,
    EN,
    NE,
    EeSpec,
    TsirSpec,
    alpha_of,
    default_params,
    ecological_aggregate_mean,
    ee_components,
    ee_mean,
    ee_mean_jacobian,
    ee_mean_matrix,
    lag_data,
    natural_params,
    param_layout,
    params_from_mapping,
    spec_from_config,
    spec_to_config,
    tsir_mean,
    tsir_mean_jacobian,
    tsir_mean_matrix,
)
from epicount.panel import make_panel, make_spatial
from epicount.weights import (
    DISTANCE_POWER_LAW,
    GRAPH_POWER_LAW,
    UNIFORM,
    WeightMatrix,
    WeightScheme,
    build_weights,
    make_scheme,
    weights_with_derivative,
)

PLAIN_TSIR = TsirSpec(
    include_endemic=False,
    fit_tau=False,
    alpha_bounds=(1.0, 1.0),
    seasonal=False,
    trend=False,
    weight_kind=UNIFORM,
)


def no_neighbors() -> WeightMatrix:
    return WeightMatrix(np.zeros((1, 1)), WeightScheme(UNIFORM))


def _two_area_spatial():
    return make_spatial(["x", "y"], [[0, 1], [1, 0]], [[0, 1], [1, 0]])


def test_tsir_endemic_only_when_lags_are_zero():
    spec = PLAIN_TSIR._replace(include_endemic=True)
    panel = make_panel(["x"], [[0, 0]], [1000])
    params = params_from_mapping(spec, panel.areas, {"lambda_en": -6.0})
    mu = tsir_mean(spec, params, panel, no_neighbors(), 2, 0)
    assert mu == pytest.approx(1000 * math.exp(-6.0))
    assert mu == pytest.approx(2.479, abs=1e-3)


def test_tsir_identity_case():
    panel = make_panel(["x"], [[5, 0]], [1000])
    params = params_from_mapping(PLAIN_TSIR, panel.areas, {"beta0_ar": 0.0})
    assert tsir_mean(PLAIN_TSIR, params, panel, no_neighbors(), 2, 0) == pytest.approx(5.0)


def test_tsir_neighbor_term():
    panel = make_panel(["x", "y"], [[0, 0], [4, 0]], [100, 100])
    params = params_from_mapping(
        PLAIN_TSIR, panel.areas, {"lambda_ne": math.log(0.01)}
    )
    w = WeightMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]), WeightScheme(UNIFORM))
    assert tsir_mean(PLAIN_TSIR, params, panel, w, 2, 0) == pytest.approx(4.0)


def test_tsir_absorbing_zero():
    panel = make_panel(["x", "y"], [[3, 0, 0], [2, 0, 0]], [100, 100])
    params = params_from_mapping(PLAIN_TSIR, panel.areas, {"beta0_ar": 0.5})
    w = build_weights(make_scheme(UNIFORM), _two_area_spatial())
    lag = lag_data(panel, [3])
    assert np.all(tsir_mean_matrix(PLAIN_TSIR, params, lag, w) == 0.0)


def test_tsir_no_mean_at_first_time():
    panel = make_panel(["x"], [[1, 2]], [100])
    params = params_from_mapping(PLAIN_TSIR, panel.areas, {})
    with pytest.raises(ParameterError):
        tsir_mean(PLAIN_TSIR, params, panel, no_neighbors(), 1, 0)


def test_tsir_susceptible_scaling():
    panel = make_panel(["x"], [[5, 0]], [1000])
    params = params_from_mapping(PLAIN_TSIR, panel.areas, {})
    sus = np.array([[500.0, 500.0]])
    mu = tsir_mean(PLAIN_TSIR, params, panel, no_neighbors(), 2, 0, susceptibles=sus)
    assert mu == pytest.approx(2.5)


def test_alpha_within_bounds():
    spec = TsirSpec(alpha_bounds=(0.95, 1.0))
    params = params_from_mapping(spec, ["x"], {"eta_alpha": 40.0})
    assert alpha_of(spec, params) == pytest.approx(1.0)
    params = params.with_block("eta_alpha", -40.0)
    assert alpha_of(spec, params) == pytest.approx(0.95)


def test_ee_endemic_only_when_lags_are_zero():
    spec = EeSpec(random_effect_blocks=frozenset({EN}), period=4)
    panel = make_panel(["x", "y"], [[0, 0, 0], [0, 0, 0]], [500, 800])
    params = params_from_mapping(
        spec,
        panel.areas,
        {"beta0_en": -5.0, "beta1_en": 0.1, "gamma_seas": 0.3, "b_en": [0.2, -0.1]},
    )
    w = build_weights(make_scheme(GRAPH_POWER_LAW, 0.5), _two_area_spatial())
    lam = -5.0 + 0.1 * 3 + 0.3 * math.sin(2 * math.pi * 3 / 4)
    assert ee_mean(spec, params, panel, w, 3, 1) == pytest.approx(
        800 * math.exp(lam - 0.1)
    )


def test_ee_identity_case():
    spec = EeSpec(components=frozenset({AR}), random_effect_blocks=frozenset())
    panel = make_panel(["x"], [[3, 0]], [100])
    params = params_from_mapping(spec, panel.areas, {"lambda_ar": 0.0})
    assert ee_mean(spec, params, panel, no_neighbors(), 2, 0) == pytest.approx(3.0)


def test_ee_neighbor_hand_evaluation():
    spec = EeSpec(
        components=frozenset({NE}), random_effect_blocks=frozenset(), weight_kind=UNIFORM
    )
    panel = make_panel(["x", "y", "z"], [[2, 0], [4, 0], [6, 0]], [100, 100, 100])
    params = params_from_mapping(spec, panel.areas, {"lambda_ne": 0.0})
    spatial = make_spatial(panel.areas, adjacency=np.zeros((3, 3)))
    w = build_weights(make_scheme(UNIFORM), spatial)
    assert ee_mean(spec, params, panel, w, 2, 0) == pytest.approx(5.0)


def test_ee_components_are_additive(small_panel, line_spatial):
    full = EeSpec(random_effect_blocks=frozenset({AR, EN}))
    values = {
        "lambda_ar": -0.5,
        "lambda_ne": -1.0,
        "beta0_en": -7.0,
        "beta1_en": 0.02,
        "gamma_seas": 0.4,
        "delta_seas": -0.3,
        "logit_theta": 0.2,
        "b_ar": [0.1, -0.2, 0.0, 0.3],
        "b_en": [0.0, 0.1, -0.1, 0.2],
    }
    params = params_from_mapping(full, small_panel.areas, values)
    w = build_weights(make_scheme(GRAPH_POWER_LAW, 1 / (1 + math.exp(-0.2))), line_spatial)
    lag = lag_data(small_panel)
    total = ee_mean_matrix(full, params, lag, w)
    parts = ee_components(full, params, lag, w)
    assert np.allclose(total, parts[AR] + parts[NE] + parts[EN], rtol=0, atol=1e-12)

    no_ne = EeSpec(components=frozenset({AR, EN}), random_effect_blocks=frozenset({AR, EN}))
    reduced = params_from_mapping(
        no_ne,
        small_panel.areas,
        {k: v for k, v in values.items() if k not in ("lambda_ne", "logit_theta")},
    )
    without = ee_mean_matrix(no_ne, reduced, lag, w)
    assert np.allclose(without, total - parts[NE], rtol=0, atol=1e-12)


def test_ee_mean_increases_with_lagged_counts(line_spatial):
    spec = EeSpec(random_effect_blocks=frozenset(), weight_kind=UNIFORM)
    areas = line_spatial.areas
    params = params_from_mapping(
        spec, areas, {"lambda_ar": -1.0, "lambda_ne": -2.0, "beta0_en": -8.0}
    )
    w = build_weights(make_scheme(UNIFORM), line_spatial)
    base = make_panel(areas, [[1, 0], [2, 0], [3, 0], [4, 0]], [100] * 4)
    more = make_panel(areas, [[1, 0], [5, 0], [3, 0], [4, 0]], [100] * 4)
    before = ee_mean_matrix(spec, params, lag_data(base), w)
    after = ee_mean_matrix(spec, params, lag_data(more), w)
    assert np.all(after > before)


def test_ee_mean_positive_with_endemic(small_panel, line_spatial):
    spec = EeSpec(weight_kind=UNIFORM)
    params = default_params(spec, small_panel)
    w = build_weights(make_scheme(UNIFORM), line_spatial)
    assert np.all(ee_mean_matrix(spec, params, lag_data(small_panel), w) > 0)


def _fd_jacobian(mean_fn, params, step=1e-6):
    base = params.values
    cols = []
    for k in range(base.size):
        up = base.copy()
        down = base.copy()
        up[k] += step
        down[k] -= step
        cols.append(
            (mean_fn(params.with_values(up)) - mean_fn(params.with_values(down)))
            / (2 * step)
        )
    return np.stack(cols)


def test_tsir_jacobian_matches_finite_difference(small_panel, line_spatial):
    spec = TsirSpec(alpha_bounds=(0.9, 1.0), period=4, weight_kind=DISTANCE_POWER_LAW)
    rng = np.random.default_rng(8)
    params = default_params(spec, small_panel)
    params = params.with_values(params.values + rng.normal(0, 0.1, params.values.size))
    lag = lag_data(small_panel)

    def weights_at(p):
        theta = 1 / (1 + math.exp(-p.get("logit_theta")))
        return weights_with_derivative(make_scheme(DISTANCE_POWER_LAW, theta), line_spatial)

    w, dw = weights_at(params)
    _, jac = tsir_mean_jacobian(spec, params, lag, w, dw)
    numeric = _fd_jacobian(
        lambda p: tsir_mean_matrix(spec, p, lag, weights_at(p)[0]), params
    )
    assert np.allclose(jac, numeric, rtol=1e-5, atol=1e-8)


def test_ee_jacobian_matches_finite_difference(small_panel, line_spatial):
    spec = EeSpec(period=4)
    rng = np.random.default_rng(9)
    params = default_params(spec, small_panel)
    params = params.with_values(params.values + rng.normal(0, 0.1, params.values.size))
    lag = lag_data(small_panel)

    def weights_at(p):
        theta = 1 / (1 + math.exp(-p.get("logit_theta")))
        return weights_with_derivative(make_scheme(GRAPH_POWER_LAW, theta), line_spatial)

    w, dw = weights_at(params)
    _, jac = ee_mean_jacobian(spec, params, lag, w, dw)
    numeric = _fd_jacobian(
        lambda p: ee_mean_matrix(spec, p, lag, weights_at(p)[0]), params
    )
    assert np.allclose(jac, numeric, rtol=1e-5, atol=1e-8)


def test_ecological_null_effect():
    means = ecological_aggregate_mean(0.3, 0.0, 0.4, 1000, 7)
    assert means.consistent == pytest.approx(math.exp(0.3) * 7)
    assert means.naive == pytest.approx(means.consistent)


def test_ecological_zero_covariate():
    means = ecological_aggregate_mean(0.3, 2.0, 0.0, 1000, 7)
    assert means.consistent == pytest.approx(math.exp(0.3) * 7)


def test_ecological_models_differ():
    means = ecological_aggregate_mean(0.0, math.log(4.0), 0.5, 1000, 1)
    assert means.consistent == pytest.approx(2.5)
    assert means.naive == pytest.approx(2.0)


def test_ecological_rejects_bad_zbar():
    with pytest.raises(ParameterError):
        ecological_aggregate_mean(0.0, 1.0, 1.5, 1000, 1)


def test_layout_is_stable():
    spec = EeSpec(random_effect_blocks=frozenset({NE, AR}))
    layout = param_layout(spec, ["x", "y"])
    assert [b.name for b in layout.blocks] == [
        "lambda_ar",
        "lambda_ne",
        "beta0_en",
        "beta1_en",
        "gamma_seas",
        "delta_seas",
        "logit_theta",
        "log_phi",
        "log_sigma_ar",
        "log_sigma_ne",
        "b_ar",
        "b_ne",
    ]
    assert layout.size == 14
    assert layout.labels()[-1] == "b_ne[y]"


def test_spec_validation():
    with pytest.raises(ModelSpecError):
        param_layout(EeSpec(components=frozenset()), ["x"])
    with pytest.raises(ModelSpecError):
        param_layout(
            EeSpec(components=frozenset({AR}), random_effect_blocks=frozenset({EN})),
            ["x"],
        )
    with pytest.raises(ModelSpecError):
        param_layout(TsirSpec(alpha_bounds=(0.0, 1.0)), ["x"])


def test_spec_config_codec():
    spec = TsirSpec(fit_tau=False, alpha_bounds=(0.9, 1.0), period=26)
    assert spec_from_config(spec_to_config(spec)) == spec
    config = {"model": "ee", "components": ["ar", "en"], "random_effects": []}
    ee = spec_from_config(config)
    assert ee.components == frozenset({AR, EN})
    with pytest.raises(ModelSpecError) as ex:
        spec_from_config({"model": "ee", "lags": 2})
    assert ex.value.code == "unknown_key"


@pytest.mark.parametrize(
    "config, key",
    [
        ({"model": "ee", "period": "weekly"}, "period"),
        ({"model": "ee", "components": "AR"}, "components"),
        ({"model": "ee", "random_effects": "EN"}, "random_effects"),
        ({"model": "ee", "seasonal": "yes"}, "seasonal"),
        ({"model": "tsir", "tau1": "high"}, "tau1"),
        ({"model": "tsir", "alpha_bounds": "0.9"}, "alpha_bounds"),
        ({"model": "tsir", "alpha_bounds": [0.9, None]}, "alpha_bounds"),
    ],
)
def test_spec_config_rejects_bad_values(config, key):
    with pytest.raises(ModelSpecError) as ex:
        spec_from_config(config)
    assert ex.value.code == "type"
    assert f"'{key}'" in ex.value.message


@pytest.mark.parametrize(
    "mapping",
    [{"lambda_en": "low"}, {"lambda_en": [[1.0]]}, {"lambda_en": math.nan}, [1.0]],
)
def test_params_from_mapping_rejects_bad_values(mapping):
    spec = EeSpec(components=frozenset({EN}), random_effect_blocks=frozenset())
    with pytest.raises(ParameterError) as ex:
        params_from_mapping(spec, ["x"], mapping)
    assert ex.value.code == "layout"


def test_natural_params():
    spec = EeSpec(random_effect_blocks=frozenset({EN}))
    params = params_from_mapping(
        spec, ["x"], {"logit_theta": 0.0, "log_phi": math.log(2.0), "log_sigma_en": 0.0}
    )
    natural = natural_params(spec, params)
    assert natural["theta"] == pytest.approx(0.5)
    assert natural["rho"] == pytest.approx(1.0)
    assert natural["phi"] == pytest.approx(2.0)
    assert natural["sigma_en"] == pytest.approx(1.0)
