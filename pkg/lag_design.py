#!/usr/bin/env python3
"""
Polynomial lag bases for distributed-lag transfer functions.

h1(v) = v, h2(v) = v(1-v), h3(v) = (1-2v) h2(v), h4(v) = (1 - 14/3 v + 14/3 v^2) h2(v)
sampled at v = l/(L+1) for lags l = 1..L.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from errors import ContractError

logger = logging.getLogger(__name__)


def h1(v):
    return np.asarray(v, dtype=float)


def h2(v):
    v = np.asarray(v, dtype=float)
    return v * (1.0 - v)


def h3(v):
    v = np.asarray(v, dtype=float)
    return (1.0 - 2.0 * v) * h2(v)


def h4(v):
    v = np.asarray(v, dtype=float)
    return (1.0 - 14.0 / 3.0 * v + 14.0 / 3.0 * v ** 2) * h2(v)


BASIS_FUNCTIONS: List[Callable] = [h1, h2, h3, h4]


@dataclass(frozen=True)
class LagBasis:
    K: int
    L_lags: int
    H: np.ndarray  # (L_lags, K), H[l-1, k-1] = h_k(l / (L_lags + 1))

    @property
    def lags(self) -> np.ndarray:
        return np.arange(1, self.L_lags + 1)


def basis_matrix(K: int, L_lags: int) -> LagBasis:
    if not 1 <= K <= len(BASIS_FUNCTIONS):
        raise ContractError(f"K must be in 1..{len(BASIS_FUNCTIONS)}, got {K}")
    if L_lags < K:
        raise ContractError(f"need at least K={K} lags, got {L_lags}")
    v = np.arange(1, L_lags + 1) / (L_lags + 1.0)
    H = np.column_stack([BASIS_FUNCTIONS[k](v) for k in range(K)])
    return LagBasis(K=K, L_lags=L_lags, H=H)


def difference(series) -> np.ndarray:
    """Lag-one difference I_t - I_{t-1}, with 0 at the first time point."""
    series = np.asarray(series, dtype=float)
    out = np.zeros_like(series)
    out[1:] = np.diff(series)
    return out


def lag_covariates(inputs, basis: LagBasis) -> np.ndarray:
    """X[t, k] = sum_l H_k(l) * input[t - l]; inputs before the first time are 0."""
    inputs = np.asarray(inputs, dtype=float).reshape(-1)
    n = len(inputs)
    X = np.zeros((n, basis.K))
    for k in range(basis.K):
        kernel = np.concatenate([[0.0], basis.H[:, k]])
        X[:, k] = np.convolve(inputs, kernel)[:n]
    return X


def implied_lag_coefs(beta, basis: LagBasis) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if len(beta) != basis.K:
        raise ContractError(f"beta has {len(beta)} entries, basis has K={basis.K}")
    return basis.H @ beta
