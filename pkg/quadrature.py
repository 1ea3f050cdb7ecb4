#!/usr/bin/env python3
"""
Gauss-Hermite rules for the exp(-x^2) kernel, tensor grids and the adaptive
affine map zeta* + sqrt(2) K* zeta_I.

For an exponent F the adapted estimate of (2 pi)^(-d/2) * int exp(F) is

    det(K*) / pi^(d/2) * sum_I exp(F(point_I)) * W_I,  W_I = exp(|zeta_I|^2) prod w.
"""
import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp, softmax

from errors import QuadratureError

logger = logging.getLogger(__name__)

MAX_Q = 50
MAX_GRID_POINTS = 10 ** 6


@dataclass(frozen=True)
class GHRule:
    Q: int
    nodes: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class RawGrid:
    nodes: np.ndarray        # (Q^d, d)
    log_weights: np.ndarray  # log W_I

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def d(self) -> int:
        return self.nodes.shape[1]


@dataclass(frozen=True)
class AdaptedGrid:
    points: np.ndarray        # (Q^d, d)
    log_weights: np.ndarray   # log W_I
    log_prefactor: float      # log det(K*) - (d/2) log pi

    @property
    def comp_weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def prefactor(self) -> float:
        return float(np.exp(self.log_prefactor))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def log_integral(self, log_integrand: np.ndarray) -> float:
        """log of prefactor * sum_I exp(log_integrand_I) W_I, stabilized."""
        return float(self.log_prefactor + logsumexp(np.asarray(log_integrand) + self.log_weights))

    def normalized_weights(self, log_integrand: np.ndarray) -> np.ndarray:
        """Self-normalized weights u_I proportional to exp(log_integrand_I) W_I."""
        return softmax(np.asarray(log_integrand) + self.log_weights)


@lru_cache(maxsize=None)
def gauss_hermite(Q: int) -> GHRule:
    """Physicists' Gauss-Hermite rule from the Jacobi matrix eigenproblem."""
    if not isinstance(Q, (int, np.integer)) or not 1 <= Q <= MAX_Q:
        raise QuadratureError(f"Q must be an integer in 1..{MAX_Q}, got {Q}")
    Q = int(Q)
    k = np.arange(1, Q)
    jacobi = np.diag(np.sqrt(k / 2.0), 1) + np.diag(np.sqrt(k / 2.0), -1)
    nodes, vectors = np.linalg.eigh(jacobi)
    weights = np.sqrt(np.pi) * vectors[0, :] ** 2
    # exact symmetry about zero
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    weights.setflags(write=False)
    nodes.setflags(write=False)
    return GHRule(Q=Q, nodes=nodes, weights=weights)


@lru_cache(maxsize=64)
def _cached_grid(Q: int, d: int) -> RawGrid:
    rule = gauss_hermite(Q)
    index = np.array(list(itertools.product(range(Q), repeat=d)), dtype=int).reshape(-1, d)
    nodes = rule.nodes[index]
    log_w = np.sum(np.log(rule.weights)[index], axis=1) + np.sum(nodes ** 2, axis=1)
    nodes.setflags(write=False)
    log_w.setflags(write=False)
    return RawGrid(nodes=nodes, log_weights=log_w)


def tensor_grid(rule: GHRule, d: int) -> RawGrid:
    if d < 1:
        raise QuadratureError(f"grid dimension must be >= 1, got {d}")
    if rule.Q ** d > MAX_GRID_POINTS:
        raise QuadratureError(f"grid of {rule.Q}^{d} points exceeds the limit of {MAX_GRID_POINTS}")
    return _cached_grid(rule.Q, int(d))


def adapt(grid: RawGrid, mode, chol) -> AdaptedGrid:
    mode = np.asarray(mode, dtype=float).reshape(-1)
    chol = np.asarray(chol, dtype=float)
    d = grid.d
    if mode.shape != (d,) or chol.shape != (d, d):
        raise QuadratureError(f"mode/Cholesky factor do not match grid dimension {d}")
    if np.any(np.triu(chol, 1) != 0):
        raise QuadratureError("Cholesky factor must be lower triangular")
    diag = np.diag(chol)
    if np.any(~np.isfinite(diag)) or np.any(diag <= 0):
        raise QuadratureError("Cholesky factor needs a positive diagonal")
    points = mode + np.sqrt(2.0) * grid.nodes @ chol.T
    log_prefactor = float(np.sum(np.log(diag)) - 0.5 * d * np.log(np.pi))
    return AdaptedGrid(points=points, log_weights=np.asarray(grid.log_weights), log_prefactor=log_prefactor)
