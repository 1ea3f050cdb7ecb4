#!/usr/bin/env python3
"""
Tests for panel simulation
"""
import numpy as np
import pandas as pd
import pytest

from conftest import default_truth, model_dict
from errors import ConfigError
from glarma_kernel import glarma_filter
from model_config import SimulationConfig
from ranef import lambda_to_L, sigma
from simulate import series_ids, simulate_panel, truth_vector, write_simulation


def test_same_seed_is_bit_identical(simulate_small):
    first = simulate_small(J=4, n=40, seed=21)
    second = simulate_small(J=4, n=40, seed=21)
    pd.testing.assert_frame_equal(first.frame, second.frame)
    pd.testing.assert_frame_equal(first.latents, second.latents)
    other = simulate_small(J=4, n=40, seed=22)
    assert not first.frame['y'].equals(other.frame['y'])


def test_worker_count_does_not_change_output(simulate_small):
    serial = simulate_small(J=5, n=30, seed=3, workers=1)
    for workers in (2, 8):
        parallel = simulate_small(J=5, n=30, seed=3, workers=workers)
        pd.testing.assert_frame_equal(serial.frame, parallel.frame)
        pd.testing.assert_frame_equal(serial.latents, parallel.latents)


def test_refiltering_reproduces_latents(simulate_small):
    for family in ('binary', 'binomial', 'poisson'):
        sim = simulate_small(family=family, J=3, n=40, d=2, p=1, q=1, trials=4, seed=5)
        cm = sim.spec.constraints
        for j, series in enumerate(sim.panel.series):
            theta = cm.series_theta(j, sim.psi)
            latent = sim.series_latents[j]
            L = lambda_to_L(theta.lam, sim.spec.structure)
            out = glarma_filter(series, theta.beta, series.X, series.R @ L @ latent.zeta, theta.arma,
                                sim.spec.family)
            np.testing.assert_allclose(out.W, latent.W, atol=1e-12)
            np.testing.assert_allclose(out.e, latent.e, atol=1e-12)
            np.testing.assert_allclose(latent.U, L @ latent.zeta)


def test_null_binary_panel_is_fair_coin(simulate_small):
    truth = {'intercept': 0.0, 'x': 0.0, 'phi1': 0.0, 'L[1,1]': 0.0}
    sim = simulate_small(J=50, n=200, truth=truth, seed=8)
    assert abs(sim.frame['y'].mean() - 0.5) <= 0.015


def test_positive_serial_dependence(simulate_small):
    for seed in range(20):
        sim = simulate_small(J=1, n=200, seed=seed, phi=0.7)
        W = sim.series_latents[0].W
        assert np.corrcoef(W[:-1], W[1:])[0, 1] > 0


def test_binomial_trials_column(simulate_small):
    sim = simulate_small(family='binomial', J=2, n=30, trials=6, seed=4)
    assert (sim.frame['m'] == 6).all()
    assert sim.frame['y'].between(0, 6).all()


def test_series_ids_and_truth_errors(simulate_small):
    assert series_ids(3) == ['s1', 's2', 's3']
    sim = simulate_small(J=2, n=10)
    with pytest.raises(ConfigError):
        truth_vector(sim.spec, {'intercept': 0.1})
    with pytest.raises(ConfigError):
        truth_vector(sim.spec, dict(default_truth(), bogus=1.0))
    per_name = truth_vector(sim.spec, dict(default_truth(), **{'phi1': 0.45}))
    assert per_name[sim.spec.constraints.index_of('phi1')] == 0.45


def test_missing_covariate_generator():
    sim = SimulationConfig.model_validate({
        'model': model_dict(), 'n_series': 2, 'n_obs': 10, 'truth': default_truth(),
    })
    with pytest.raises(ConfigError):
        simulate_panel(sim)


def test_write_simulation_loads_back(simulate_small, tmp_path):
    sim = simulate_small(J=2, n=25)
    paths = write_simulation(sim, str(tmp_path))
    data = pd.read_csv(paths['data'])
    assert list(data.columns) == list(sim.frame.columns)
    np.testing.assert_array_equal(data['y'].to_numpy(), sim.frame['y'].to_numpy())
    latents = pd.read_csv(paths['latents'])
    assert {'series_id', 'time', 'W', 'alpha', 'e', 'zeta_intercept', 'U_intercept'} <= set(latents.columns)


@pytest.mark.slow
def test_random_effect_covariance_matches_sigma(simulate_small):
    sim = simulate_small(d=2, J=2000, n=5, seed=31)
    U = sim.U
    target = sigma(sim.psi[sim.spec.constraints.lambda_slice], sim.spec.structure)
    sample = np.cov(U.T)
    # var of a sample covariance entry is (s_ii s_jj + s_ij^2) / J
    se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target ** 2) / len(U))
    assert np.all(np.abs(sample - target) <= 5 * se)
