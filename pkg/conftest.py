"""
Shared pytest fixtures: small simulated panels and the slow-test switch.
"""
import os

import pytest

from model_config import ModelConfig, SimulationConfig
from simulate import simulate_panel

RUN_SLOW = os.getenv('GLARMA_RUN_SLOW') == '1'


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long Monte Carlo runs, enabled with GLARMA_RUN_SLOW=1')


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason='set GLARMA_RUN_SLOW=1 to run')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


def model_dict(family='binary', d=1, p=1, q=0, sharing='common', serial_sharing='common', **extra):
    random = ['intercept', 'x'][:d]
    model = {
        'family': family,
        'fixed_effects': [{'name': 'intercept', 'sharing': sharing}, {'name': 'x', 'sharing': sharing}],
        'serial': {'p': p, 'q': q, 'sharing': serial_sharing},
        'random_effects': {'covariates': random},
        'quadrature': {'schedule': [[3, 20], [5, 30]]},
    }
    if family == 'binomial':
        model['columns'] = {'m': 'm'}
    model.update(extra)
    return model


def default_truth(d=1, p=1, q=0, intercept=0.2, slope=0.5, phi=0.3, theta=0.2):
    truth = {'intercept': intercept, 'x': slope}
    truth.update({f"phi{l}": phi for l in range(1, p + 1)})
    truth.update({f"theta{l}": theta for l in range(1, q + 1)})
    lam = {1: {'L[1,1]': 0.8}, 2: {'L[1,1]': 0.8, 'L[2,1]': 0.2, 'L[2,2]': 0.5}}
    truth.update(lam.get(d, {}))
    return truth


@pytest.fixture
def simulate_small():
    """Factory: simulate_small(family='binary', J=2, n=50, d=1, ...) -> SimulatedPanel"""

    def factory(family='binary', J=2, n=50, d=1, p=1, q=0, seed=1, trials=1, truth=None,
                workers=1, model=None, **truth_kwargs):
        sim = SimulationConfig.model_validate({
            'model': model or model_dict(family=family, d=d, p=p, q=q),
            'n_series': J,
            'n_obs': n,
            'trials': trials,
            'covariates': {'x': {'kind': 'normal', 'scale': 1.0}},
            'truth': truth or default_truth(d=d, p=p, q=q, **truth_kwargs),
            'seed': seed,
        })
        return simulate_panel(sim, workers=workers)

    return factory


@pytest.fixture
def parse_model():
    def factory(**kwargs):
        return ModelConfig.model_validate(model_dict(**kwargs))
    return factory
