#!/usr/bin/env python3
"""
Tests for the adaptive quadrature marginal likelihood and its derivatives
"""
import numpy as np
import pytest

from conftest import default_truth, model_dict
from errors import SeriesEvaluationError
from glarma_kernel import glarma_filter
from marginal_likelihood import (agq_series, inner_exponent, inner_mode, laplace_loglik, panel_loglik,
                                 series_posterior)
from numerical_checks import (central_gradient, derivative_check, simpson_posterior_mean,
                              simpson_series_loglik)


def without_random_effects(sim):
    psi = sim.psi.copy()
    psi[sim.spec.constraints.lambda_slice] = 0.0
    return psi


def test_laplace_equals_one_point_rule(simulate_small):
    for d in (1, 2):
        sim = simulate_small(d=d, J=3, n=60, seed=5)
        for j in range(sim.panel.J):
            laplace = laplace_loglik(sim.panel, sim.spec, j, sim.psi)
            agq = agq_series(sim.panel, sim.spec, j, sim.psi, 1, want_derivs=0).loglik
            assert abs(laplace - agq) <= 1e-12 * (1 + abs(laplace))


def test_inner_exponent_derivatives(simulate_small):
    sim = simulate_small(d=2, J=1, n=80, seed=2)
    zeta0 = np.array([0.3, -0.4])
    F, g, H = inner_exponent(sim.panel, sim.spec, 0, sim.psi, zeta0)

    def value(z):
        return float(inner_exponent(sim.panel, sim.spec, 0, sim.psi, z, want_derivs=0)[0])

    def gradient(z):
        return inner_exponent(sim.panel, sim.spec, 0, sim.psi, z, want_derivs=1)[1]

    np.testing.assert_allclose(g, central_gradient(value, zeta0, 1e-6), rtol=1e-6, atol=1e-6)
    fd_hess = np.column_stack([(gradient(zeta0 + h) - gradient(zeta0 - h)) / 2e-5 for h in 1e-5 * np.eye(2)])
    np.testing.assert_allclose(H, fd_hess, rtol=1e-5, atol=1e-5)


def test_zero_covariance_reduces_to_fixed_effects(simulate_small):
    sim = simulate_small(J=2, n=50)
    psi = without_random_effects(sim)
    cm = sim.spec.constraints

    solution = inner_mode(sim.panel, sim.spec, 0, psi)
    np.testing.assert_array_equal(solution.zeta_star, 0.0)
    np.testing.assert_allclose(solution.sigma_star, np.eye(1), atol=1e-14)
    assert solution.iterations <= 1

    expected_l, expected_g, expected_h = 0.0, np.zeros(3), np.zeros((3, 3))
    for j, series in enumerate(sim.panel.series):
        theta = cm.series_theta(j, psi)
        out = glarma_filter(series, theta.beta, series.X, np.zeros(series.n), theta.arma, sim.spec.family,
                            want_derivs=2)
        expected_l += out.loglik
        expected_g += out.grad
        expected_h += out.hess
    idx = [cm.index_of(name) for name in ('intercept', 'x', 'phi1')]
    for Q in (1, 3, 7):
        ev = panel_loglik(psi, Q, sim.panel, sim.spec)
        assert ev.loglik == pytest.approx(expected_l, abs=1e-10)
        np.testing.assert_allclose(ev.grad[idx], expected_g, atol=1e-9)
        np.testing.assert_allclose(ev.hess[np.ix_(idx, idx)], expected_h, atol=1e-9)


def test_matches_simpson_oracle(simulate_small):
    sim = simulate_small(J=2, n=50, seed=3)
    for j in range(sim.panel.J):
        oracle = simpson_series_loglik(sim.panel, sim.spec, j, sim.psi)
        agq = agq_series(sim.panel, sim.spec, j, sim.psi, 20, want_derivs=0).loglik
        assert abs(agq - oracle) <= 1e-8 * abs(oracle)

        post = series_posterior(sim.panel, sim.spec, j, sim.psi, 20)
        assert post.zeta_mean[0] == pytest.approx(simpson_posterior_mean(sim.panel, sim.spec, j, sim.psi),
                                                  abs=1e-6)


def test_laplace_is_close_to_the_oracle(simulate_small):
    sim = simulate_small(J=1, n=100, seed=4)
    oracle = simpson_series_loglik(sim.panel, sim.spec, 0, sim.psi)
    assert abs(laplace_loglik(sim.panel, sim.spec, 0, sim.psi) - oracle) < 1e-2


def test_mode_matches_grid_search(simulate_small):
    sim = simulate_small(d=2, J=1, n=200, seed=6)
    mode = inner_mode(sim.panel, sim.spec, 0, sim.psi).zeta_star

    coarse = np.stack(np.meshgrid(np.arange(-4, 4.0001, 0.1), np.arange(-4, 4.0001, 0.1)), -1).reshape(-1, 2)
    F, _, _ = inner_exponent(sim.panel, sim.spec, 0, sim.psi, coarse, want_derivs=0)
    assert np.max(np.abs(coarse[np.argmax(F)] - mode)) <= 0.2

    axis = np.arange(-0.5, 0.5001, 0.01)
    fine = np.stack(np.meshgrid(axis, axis), -1).reshape(-1, 2) + np.round(mode, 2)
    F, _, _ = inner_exponent(sim.panel, sim.spec, 0, sim.psi, fine, want_derivs=0)
    assert np.max(np.abs(fine[np.argmax(F)] - mode)) <= 0.02


@pytest.mark.parametrize('family,d', [('binary', 1), ('binary', 2), ('poisson', 1), ('binomial', 2)])
def test_inner_mode_converges_quickly_from_zero(simulate_small, family, d):
    sim = simulate_small(family=family, d=d, J=4, n=100, seed=17, trials=3 if family == 'binomial' else 1)
    ev = panel_loglik(sim.psi, 5, sim.panel, sim.spec, want_derivs=0)
    assert ev.inner_iterations <= 25
    assert all(b.inner_iterations <= 25 for b in ev.bundles)


def test_loglik_changes_shrink_with_q(simulate_small):
    sim = simulate_small(J=2, n=50, seed=3)
    values = [panel_loglik(sim.psi, Q, sim.panel, sim.spec, want_derivs=0).loglik for Q in range(3, 10)]
    changes = np.abs(np.diff(values))
    assert np.all(changes[1:] <= changes[:-1] + 1e-10)


def test_large_random_effect_scale_stays_finite(simulate_small):
    truth = dict(default_truth(phi=0.5), **{'L[1,1]': 4.0})
    sim = simulate_small(J=6, n=100, truth=truth)
    for Q in (5, 20):
        ev = panel_loglik(sim.psi, Q, sim.panel, sim.spec)
        assert np.isfinite(ev.loglik)
        assert np.all(np.isfinite(ev.grad))
        assert np.all(np.isfinite(ev.hess))
    for j in range(sim.panel.J):
        post = series_posterior(sim.panel, sim.spec, j, sim.psi, 20)
        assert np.all(np.isfinite(post.zeta_mean))

@pytest.mark.parametrize('sharing,serial_sharing', [('common', 'common'), ('common', 'series'),
                                                    ('series', 'series')])
def test_gradient_and_hessian_match_finite_differences(simulate_small, sharing, serial_sharing):
    model = model_dict(sharing=sharing, serial_sharing=serial_sharing)
    sim = simulate_small(J=2, n=100, seed=7, model=model)
    check = derivative_check(sim.panel, sim.spec, sim.psi, Q=10, h=1e-5)
    assert check['gradient_error'].max() <= 1e-4
    ev = panel_loglik(sim.psi, 10, sim.panel, sim.spec)
    assert check['hessian_row_error'].max() <= 1e-3 * (1 + np.max(np.abs(ev.hess)))
    np.testing.assert_allclose(ev.hess, ev.hess.T, atol=1e-10)


def test_integral_count(simulate_small):
    sim = simulate_small(J=3, n=30)
    S = sim.spec.n_params
    ev = panel_loglik(sim.psi, 3, sim.panel, sim.spec)
    assert ev.integral_count == 3 * (S + 1) ** 2
    assert panel_loglik(sim.psi, 3, sim.panel, sim.spec, want_derivs=0).integral_count == 3


def test_worker_count_does_not_change_results(simulate_small):
    sim = simulate_small(J=6, n=40, seed=8)
    reference = panel_loglik(sim.psi, 5, sim.panel, sim.spec, workers=1)
    for workers in (2, 8):
        ev = panel_loglik(sim.psi, 5, sim.panel, sim.spec, workers=workers)
        assert ev.loglik == reference.loglik
        np.testing.assert_array_equal(ev.grad, reference.grad)
        np.testing.assert_array_equal(ev.hess, reference.hess)


def test_series_order_does_not_change_loglik(simulate_small):
    sim = simulate_small(J=5, n=40, seed=9)
    base = panel_loglik(sim.psi, 5, sim.panel, sim.spec, want_derivs=0).loglik
    shuffled = sim.panel.reordered([3, 0, 4, 2, 1])
    assert panel_loglik(sim.psi, 5, shuffled, sim.spec, want_derivs=0).loglik == pytest.approx(base, abs=1e-12)


def test_single_series_panel_is_the_series_term(simulate_small):
    sim = simulate_small(J=1, n=50)
    ev = panel_loglik(sim.psi, 4, sim.panel, sim.spec)
    bundle = agq_series(sim.panel, sim.spec, 0, sim.psi, 4)
    assert ev.loglik == bundle.loglik
    np.testing.assert_array_equal(ev.grad[bundle.indices], bundle.grad)


def test_posterior_without_random_effects_is_zero(simulate_small):
    sim = simulate_small(J=1, n=50)
    post = series_posterior(sim.panel, sim.spec, 0, without_random_effects(sim), 6)
    np.testing.assert_allclose(post.zeta_mean, 0.0, atol=1e-10)
    np.testing.assert_array_equal(post.U_hat, 0.0)


def test_series_failure_names_the_series(simulate_small):
    sim = simulate_small(J=2, n=20)
    psi = sim.psi.copy()
    psi[sim.spec.constraints.index_of('intercept')] = np.inf
    with pytest.raises(SeriesEvaluationError) as exc:
        panel_loglik(psi, 3, sim.panel, sim.spec)
    assert exc.value.series == 's1'

