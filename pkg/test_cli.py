#!/usr/bin/env python3
"""
End-to-end tests of the command-line tools
"""
import json

import numpy as np
import pandas as pd
import pytest

from cli import EXIT_ERROR, EXIT_OK, main
from conftest import default_truth, model_dict


def write_json(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture(scope='module')
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp('cli')
    model = write_json(root / 'model.json', model_dict())
    reduced = write_json(root / 'reduced.json', model_dict(d=0))
    sim = write_json(root / 'sim.json', {
        'model': 'model.json', 'n_series': 10, 'n_obs': 150,
        'covariates': {'x': {'kind': 'normal', 'scale': 1.0}}, 'truth': default_truth(), 'seed': 3,
    })
    assert main(['simulate', '--config', sim, '--out-dir', str(root / 'sim')]) == EXIT_OK
    data = str(root / 'sim' / 'data.csv')
    code = main(['fit', '--data', data, '--config', model, '--out-dir', str(root / 'fit')])
    return {'root': root, 'model': model, 'reduced': reduced, 'sim': sim, 'data': data, 'fit_code': code}


def test_basis_command(tmp_path):
    assert main(['basis', '--K', '3', '--lags', '11', '--beta', '1,0,0', '--out-dir', str(tmp_path)]) == EXIT_OK
    table = pd.read_csv(tmp_path / 'basis.csv')
    assert list(table.columns) == ['lag', 'v', 'h1', 'h2', 'h3', 'omega']
    assert len(table) == 11
    np.testing.assert_allclose(table['omega'], table['h1'])
    np.testing.assert_allclose(table['v'], np.arange(1, 12) / 12)


def test_simulate_is_seeded(workspace, tmp_path):
    first = (workspace['root'] / 'sim' / 'data.csv').read_bytes()
    assert main(['simulate', '--config', workspace['sim'], '--out-dir', str(tmp_path / 'a')]) == EXIT_OK
    assert (tmp_path / 'a' / 'data.csv').read_bytes() == first
    assert main(['simulate', '--config', workspace['sim'], '--out-dir', str(tmp_path / 'b'), '--seed', '4']) == EXIT_OK
    assert (tmp_path / 'b' / 'data.csv').read_bytes() != first


def test_fit_report(workspace):
    assert workspace['fit_code'] == EXIT_OK
    out = workspace['root'] / 'fit'
    estimates = pd.read_csv(out / 'estimates.csv')
    assert list(estimates.columns) == ['component', 'parameter', 'estimate', 'se']
    assert list(estimates['parameter']) == ['intercept', 'x', 'phi1', 'L[1,1]']
    truth = default_truth()
    for _, row in estimates.iterrows():
        assert abs(row['estimate'] - truth[row['parameter']]) <= 4 * row['se']
    posterior = pd.read_csv(out / 'posterior_means.csv')
    assert len(posterior) == 10
    summary = json.loads((out / 'fit_summary.json').read_text())
    assert summary['converged'] is True
    trace = pd.read_csv(out / 'trace.csv')
    assert 'wall_time' not in trace.columns
    assert not (out / 'timings.csv').exists()


def test_fit_rerun_is_byte_identical(workspace, tmp_path):
    code = main(['fit', '--data', workspace['data'], '--config', workspace['model'], '--out-dir', str(tmp_path),
                 '--workers', '3'])
    assert code == workspace['fit_code']
    written = sorted(path.name for path in tmp_path.iterdir())
    assert written == sorted(path.name for path in (workspace['root'] / 'fit').iterdir())
    for name in written:
        assert (tmp_path / name).read_bytes() == (workspace['root'] / 'fit' / name).read_bytes(), name


def test_fit_timings_on_request(workspace, tmp_path):
    code = main(['fit', '--data', workspace['data'], '--config', workspace['model'], '--out-dir', str(tmp_path),
                 '--timings'])
    assert code == workspace['fit_code']
    timings = pd.read_csv(tmp_path / 'timings.csv')
    trace = pd.read_csv(tmp_path / 'trace.csv')
    assert len(timings) == len(trace)
    assert (timings['seconds'] >= 0).all()


def test_loglik_matches_fit(workspace, tmp_path):
    psi = str(workspace['root'] / 'fit' / 'estimates.csv')
    code = main(['loglik', '--data', workspace['data'], '--config', workspace['model'], '--psi', psi,
                 '--q', '5', '--out-dir', str(tmp_path)])
    assert code == EXIT_OK
    loglik = json.loads((tmp_path / 'loglik.json').read_text())
    summary = json.loads((workspace['root'] / 'fit' / 'fit_summary.json').read_text())
    assert loglik['loglik'] == pytest.approx(summary['loglik'], rel=1e-10)
    gradient = pd.read_csv(tmp_path / 'gradient.csv')
    assert np.max(np.abs(gradient['gradient'])) <= 1e-5 * (1.0 + abs(loglik['loglik']))
    assert len(pd.read_csv(tmp_path / 'hessian.csv')) == 4


def test_check_derivatives(workspace, tmp_path):
    psi = str(workspace['root'] / 'fit' / 'estimates.csv')
    code = main(['check-derivatives', '--data', workspace['data'], '--config', workspace['model'], '--psi', psi,
                 '--q', '10', '--out-dir', str(tmp_path)])
    assert code == EXIT_OK
    table = pd.read_csv(tmp_path / 'derivative_check.csv')
    assert table['gradient_error'].max() <= 1e-4


def test_benchmark_q(workspace, tmp_path):
    psi = str(workspace['root'] / 'fit' / 'estimates.csv')
    code = main(['benchmark-q', '--data', workspace['data'], '--config', workspace['model'], '--psi', psi,
                 '--q-list', '3,5,6,7', '--out-dir', str(tmp_path)])
    assert code == EXIT_OK
    table = pd.read_csv(tmp_path / 'benchmark_q.csv')
    assert list(table['grid_points']) == [3, 5, 6, 7]
    assert list(table['integral_count']) == [10 * 25] * 4
    changes = np.abs(np.diff(table['loglik']))
    assert changes[1] < 1e-2 and changes[2] < 1e-2


def test_posterior_command(workspace, tmp_path):
    psi = str(workspace['root'] / 'fit' / 'estimates.csv')
    code = main(['posterior', '--data', workspace['data'], '--config', workspace['model'], '--psi', psi,
                 '--out-dir', str(tmp_path)])
    assert code == EXIT_OK
    written = pd.read_csv(tmp_path / 'posterior_means.csv')
    reported = pd.read_csv(workspace['root'] / 'fit' / 'posterior_means.csv')
    pd.testing.assert_frame_equal(written, reported)


def test_lr_test_flags_boundary(workspace, tmp_path):
    code = main(['lr-test', '--data', workspace['data'], '--config', workspace['model'],
                 '--reduced-config', workspace['reduced'], '--out-dir', str(tmp_path)])
    assert code == EXIT_OK
    result = json.loads((tmp_path / 'lr_test.json').read_text())
    assert result['df'] == 1
    assert result['boundary'] is True
    assert result['G2'] >= 0


def test_invalid_input_exits_with_error(workspace, tmp_path):
    broken = tmp_path / 'broken.csv'
    pd.read_csv(workspace['data']).drop(columns='x').to_csv(broken, index=False)
    code = main(['fit', '--data', str(broken), '--config', workspace['model'], '--out-dir', str(tmp_path)])
    assert code == EXIT_ERROR
    bad_config = write_json(tmp_path / 'bad.json', dict(model_dict(), typo=1))
    assert main(['fit', '--data', workspace['data'], '--config', bad_config,
                 '--out-dir', str(tmp_path)]) == EXIT_ERROR


def test_invalid_environment_exits_with_error(monkeypatch, tmp_path, caplog):
    monkeypatch.setenv('GLARMA_WORKERS', 'abc')
    code = main(['basis', '--K', '3', '--lags', '11', '--out-dir', str(tmp_path)])
    assert code == EXIT_ERROR
    assert not (tmp_path / 'basis.csv').exists()
    assert "GLARMA_WORKERS must be an integer, got 'abc'" in caplog.text


@pytest.mark.slow
def test_benchmark_q_stabilizes_on_a_two_effect_panel(tmp_path):
    model = write_json(tmp_path / 'model.json', model_dict(d=2))
    sim = write_json(tmp_path / 'sim.json', {
        'model': 'model.json', 'n_series': 8, 'n_obs': 150,
        'covariates': {'x': {'kind': 'normal', 'scale': 1.0}}, 'truth': default_truth(d=2), 'seed': 11,
    })
    assert main(['simulate', '--config', sim, '--out-dir', str(tmp_path / 'sim')]) == EXIT_OK
    code = main(['benchmark-q', '--data', str(tmp_path / 'sim' / 'data.csv'), '--config', model,
                 '--q-list', '2,3,4,5,6,7', '--repeats', '3', '--out-dir', str(tmp_path / 'bench')])
    assert code == EXIT_OK
    table = pd.read_csv(tmp_path / 'bench' / 'benchmark_q.csv').set_index('Q')

    changes = np.abs(np.diff(table['loglik'].to_numpy()))
    # changes[k] compares Q=k+2 with Q=k+3
    assert np.all(np.diff(changes[1:]) <= 0)
    assert changes[3] <= 1e-2
    assert changes[4] <= 1e-3
    assert table.loc[6, 'se_pct_change'] <= 0.5

    Q = table.index.to_numpy()
    growth = table['seconds'].to_numpy() / table.loc[2, 'seconds']
    assert np.all(growth <= 2.0 * (Q / 2.0) ** 2)
