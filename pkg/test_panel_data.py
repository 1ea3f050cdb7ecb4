#!/usr/bin/env python3
"""
Tests for panel ingestion, constraint matrices and parameter naming
"""
import numpy as np
import pandas as pd
import pytest

from conftest import model_dict
from errors import ConfigError, DataError
from model_config import ModelConfig
from panel_data import build_panel, load_panel, read_psi


def small_frame():
    return pd.DataFrame({
        'series_id': ['a'] * 4 + ['b'] * 3,
        'time': [1, 2, 3, 4, 1, 2, 3],
        'y': [0, 1, 1, 0, 1, 0, 1],
        'x': [0.1, -0.2, 0.3, 0.0, 1.2, -0.7, 0.4],
    })


def config(**kwargs):
    return ModelConfig.model_validate(model_dict(**kwargs))


def test_build_panel_shapes():
    panel, spec = build_panel(small_frame(), config(d=2))
    assert panel.J == 2 and panel.ids == ['a', 'b'] and panel.total_obs == 7
    a = panel.series[0]
    np.testing.assert_array_equal(a.X[:, 0], 1.0)
    np.testing.assert_array_equal(a.R[:, 1], [0.1, -0.2, 0.3, 0.0])
    assert spec.constraints.names == ('intercept', 'x', 'phi1', 'L[1,1]', 'L[2,1]', 'L[2,2]')
    assert spec.constraints.components == ('fixed', 'fixed', 'serial', 'random', 'random', 'random')


def test_parameter_names_by_sharing():
    _, spec = build_panel(small_frame(), config(sharing='series', serial_sharing='series', p=2, q=1))
    assert spec.constraints.names == (
        'intercept[a]', 'intercept[b]', 'x[a]', 'x[b]',
        'phi1[a]', 'phi2[a]', 'theta1[a]', 'phi1[b]', 'phi2[b]', 'theta1[b]', 'L[1,1]',
    )


def test_grouped_sharing_and_series_theta():
    raw = model_dict(p=1, q=1)
    raw['fixed_effects'] = [{'name': 'intercept', 'sharing': 'series'},
                            {'name': 'x', 'sharing': {'g': ['a', 'b']}}]
    raw['serial'] = {'groups': [{'name': 'slow', 'p': 1, 'q': 0, 'series': ['a']},
                                {'name': 'fast', 'p': 2, 'q': 1, 'series': ['b']}]}
    _, spec = build_panel(small_frame(), ModelConfig.model_validate(raw))
    cm = spec.constraints
    assert cm.names == ('intercept[a]', 'intercept[b]', 'x[g]', 'phi1[slow]', 'phi1[fast]', 'phi2[fast]',
                        'theta1[fast]', 'L[1,1]')
    psi = np.arange(1.0, 9.0)
    a, b = cm.series_theta(0, psi), cm.series_theta(1, psi)
    np.testing.assert_array_equal(a.beta, [1.0, 3.0])
    np.testing.assert_array_equal(b.beta, [2.0, 3.0])
    np.testing.assert_array_equal(a.arma.phi, [4.0])
    assert a.arma.q == 0
    np.testing.assert_array_equal(b.arma.phi, [5.0, 6.0])
    np.testing.assert_array_equal(b.arma.theta_ma, [7.0])
    np.testing.assert_array_equal(a.lam, [8.0])


def test_series_jacobian_maps_psi_to_theta():
    _, spec = build_panel(small_frame(), config(sharing='common', serial_sharing='series', d=2))
    cm = spec.constraints
    rng = np.random.default_rng(0)
    psi = rng.normal(size=cm.size)
    for j in range(2):
        index, G = cm.series_jacobian(j)
        theta = cm.series_theta(j, psi)
        expected = np.concatenate([theta.beta, theta.lam, theta.arma.phi, theta.arma.theta_ma])
        np.testing.assert_allclose(G @ psi[index], expected)


def test_identity_groups_equal_series_sharing():
    raw = model_dict()
    raw['fixed_effects'] = [{'name': 'intercept', 'sharing': {'a': ['a'], 'b': ['b']}},
                            {'name': 'x', 'sharing': {'a': ['a'], 'b': ['b']}}]
    _, grouped = build_panel(small_frame(), ModelConfig.model_validate(raw))
    _, per_series = build_panel(small_frame(), config(sharing='series'))
    np.testing.assert_array_equal(grouped.constraints.A_beta, per_series.constraints.A_beta)
    assert grouped.constraints.names == per_series.constraints.names


def test_bad_groups():
    raw = model_dict()
    raw['fixed_effects'] = [{'name': 'intercept', 'sharing': {'g': ['a', 'zz']}}]
    with pytest.raises(ConfigError) as exc:
        build_panel(small_frame(), ModelConfig.model_validate(raw))
    messages = ' '.join(exc.value.errors)
    assert 'zz' in messages and "['b']" in messages


def test_row_numbers_in_data_errors():
    frame = small_frame()
    frame.loc[5, 'time'] = 3
    with pytest.raises(DataError) as exc:
        build_panel(frame, config())
    assert any(e.startswith('row 7') for e in exc.value.errors)

    frame = small_frame()
    frame.loc[2, 'y'] = 2
    with pytest.raises(DataError) as exc:
        build_panel(frame, config())
    assert any(e.startswith('row 4') for e in exc.value.errors)

    frame = small_frame()
    frame.loc[6, 'x'] = np.nan
    with pytest.raises(DataError) as exc:
        build_panel(frame, config())
    assert any(e.startswith('row 8') and "'x'" in e for e in exc.value.errors)


def test_unsorted_series_are_rejected():
    frame = pd.concat([small_frame().iloc[:2], small_frame().iloc[4:], small_frame().iloc[2:4]],
                      ignore_index=True)
    with pytest.raises(DataError) as exc:
        build_panel(frame, config())
    assert any('sorted' in e for e in exc.value.errors)


def test_missing_columns():
    with pytest.raises(DataError) as exc:
        build_panel(small_frame().drop(columns='x'), config())
    assert "['x']" in exc.value.errors[0]


def test_lag_basis_columns_are_derived():
    raw = model_dict(lag_basis={'input': 'x', 'K': 2, 'lags': 2})
    raw['fixed_effects'] = [{'name': 'intercept', 'sharing': 'common'}, {'name': 'tf_h1', 'sharing': 'common'},
                            {'name': 'tf_h2', 'sharing': 'common'}]
    raw['random_effects'] = {'covariates': ['intercept']}
    panel, spec = build_panel(small_frame(), ModelConfig.model_validate(raw))
    assert spec.lag_names == ('tf_h1', 'tf_h2')
    H = spec.lag_basis.H
    b = panel.series[1]
    # series b restarts its lags at zero
    np.testing.assert_array_equal(b.X[0, 1:], 0.0)
    np.testing.assert_allclose(b.X[1, 1:], H[0] * 1.2)
    np.testing.assert_allclose(b.X[2, 1:], H[0] * -0.7 + H[1] * 1.2)


def test_load_panel_and_read_psi(tmp_path):
    path = tmp_path / 'data.csv'
    small_frame().to_csv(path, index=False)
    panel, spec = load_panel(str(path), config())
    assert panel.J == 2
    estimates = pd.DataFrame({'parameter': list(spec.constraints.names), 'estimate': [0.1, 0.2, 0.3, 0.4]})
    psi_path = tmp_path / 'psi.csv'
    estimates.to_csv(psi_path, index=False)
    np.testing.assert_array_equal(read_psi(str(psi_path), spec), [0.1, 0.2, 0.3, 0.4])
    estimates.iloc[:3].to_csv(psi_path, index=False)
    with pytest.raises(DataError):
        read_psi(str(psi_path), spec)
    with pytest.raises(DataError):
        load_panel(str(tmp_path / 'missing.csv'), config())
