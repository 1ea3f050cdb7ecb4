#!/usr/bin/env python3
"""
Finite-difference and brute-force integration oracles.

Used by the test suite and by the check-derivatives command to verify the
analytic gradients and Hessians and the quadrature log-likelihood.
"""
import logging
from typing import Callable

import numpy as np
import pandas as pd
from scipy.special import logsumexp, softmax

from errors import ContractError
from marginal_likelihood import inner_exponent, panel_loglik
from panel_data import ModelSpec, PanelData

logger = logging.getLogger(__name__)


def central_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.zeros(len(x))
    for i in range(len(x)):
        step = np.zeros(len(x))
        step[i] = h
        grad[i] = (f(x + step) - f(x - step)) / (2.0 * h)
    return grad


def central_jacobian(g: Callable[[np.ndarray], np.ndarray], x, h: float = 1e-5) -> np.ndarray:
    """Column i holds (g(x + h e_i) - g(x - h e_i)) / 2h."""
    x = np.asarray(x, dtype=float)
    columns = []
    for i in range(len(x)):
        step = np.zeros(len(x))
        step[i] = h
        columns.append((np.asarray(g(x + step)) - np.asarray(g(x - step))) / (2.0 * h))
    return np.column_stack(columns) if columns else np.zeros((0, 0))


def simpson_log_weights(lo: float, hi: float, panels: int):
    """Nodes and log weights of composite Simpson's rule with an even number of panels."""
    if panels < 2 or panels % 2:
        raise ContractError(f"Simpson's rule needs an even number of panels, got {panels}")
    nodes = np.linspace(lo, hi, panels + 1)
    coef = np.ones(panels + 1)
    coef[1:-1:2] = 4.0
    coef[2:-1:2] = 2.0
    h = (hi - lo) / panels
    return nodes, np.log(coef * h / 3.0)


def _series_log_integrand(panel: PanelData, spec: ModelSpec, j: int, psi, nodes: np.ndarray,
                          chunk: int) -> np.ndarray:
    values = []
    for start in range(0, len(nodes), chunk):
        points = nodes[start:start + chunk, None]
        F, _, _ = inner_exponent(panel, spec, j, psi, points, want_derivs=0)
        values.append(np.asarray(F))
    return np.concatenate(values)


def simpson_series_loglik(panel: PanelData, spec: ModelSpec, j: int, psi, lo: float = -10.0,
                          hi: float = 10.0, panels: int = 100000, chunk: int = 20001) -> float:
    """log (2 pi)^(-1/2) int exp(F_j) over [lo, hi] for a one-dimensional random effect."""
    if spec.d != 1:
        raise ContractError(f"the Simpson oracle integrates one random effect, model has d={spec.d}")
    nodes, log_w = simpson_log_weights(lo, hi, panels)
    F = _series_log_integrand(panel, spec, j, psi, nodes, chunk)
    return float(logsumexp(F + log_w) - 0.5 * np.log(2.0 * np.pi))


def simpson_posterior_mean(panel: PanelData, spec: ModelSpec, j: int, psi, lo: float = -10.0,
                           hi: float = 10.0, panels: int = 100000, chunk: int = 20001) -> float:
    if spec.d != 1:
        raise ContractError(f"the Simpson oracle integrates one random effect, model has d={spec.d}")
    nodes, log_w = simpson_log_weights(lo, hi, panels)
    F = _series_log_integrand(panel, spec, j, psi, nodes, chunk)
    return float(softmax(F + log_w) @ nodes)


def derivative_check(panel: PanelData, spec: ModelSpec, psi, Q: int, h: float = 1e-5,
                     workers: int = 1) -> pd.DataFrame:
    """Analytic AGQ gradient and Hessian against central differences, one row per parameter."""
    psi = np.asarray(psi, dtype=float)
    ev = panel_loglik(psi, Q, panel, spec, want_derivs=2, workers=workers)

    def loglik(x):
        return panel_loglik(x, Q, panel, spec, want_derivs=0, workers=workers).loglik

    def gradient(x):
        return panel_loglik(x, Q, panel, spec, want_derivs=1, workers=workers).grad

    fd_grad = central_gradient(loglik, psi, h)
    fd_hess = central_jacobian(gradient, psi, h)
    scale = 1.0 + float(np.max(np.abs(ev.grad))) if len(psi) else 1.0
    rows = []
    for i, name in enumerate(spec.constraints.names):
        rows.append({
            'parameter': name,
            'gradient': ev.grad[i],
            'fd_gradient': fd_grad[i],
            'gradient_error': abs(ev.grad[i] - fd_grad[i]) / scale,
            'hessian_row_error': float(np.max(np.abs(ev.hess[i] - fd_hess[i]))),
        })
    logger.info(f"Derivative check at Q={Q}: max scaled gradient error "
                f"{max((r['gradient_error'] for r in rows), default=0.0):.3e}")
    return pd.DataFrame(rows)
