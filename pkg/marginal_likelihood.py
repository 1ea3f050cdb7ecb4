#!/usr/bin/env python3
"""
Marginal likelihood of a panel of GLARMA series with Gaussian random effects.

For series j the random effects are integrated out against N(0, I_d):

    l_j(Psi) = log (2 pi)^(-d/2) int exp(F_j(zeta; Psi)) d zeta
    F_j      = log f(y_j | zeta; Psi) - zeta'zeta / 2

The integral is approximated by adaptive Gauss-Hermite quadrature centred on
the mode of F_j (Q = 1 is the Laplace approximation). Derivatives in Psi use
the self-normalized quadrature weights; the grid itself is held fixed.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import linalg

from errors import ContractError, DegenerateProbabilityError, DivergenceError, InnerModeError, SeriesEvaluationError
from glarma_kernel import SeriesData, glarma_filter
from panel_data import ModelSpec, PanelData, SeriesTheta
from quadrature import AdaptedGrid, adapt, gauss_hermite, tensor_grid
from ranef import lambda_covariate_rows_batch, lambda_to_L

logger = logging.getLogger(__name__)

INNER_RIDGE = 1e-4

# exponent(zeta) -> (F, dF/dzeta, d2F/dzeta2)
Exponent = Callable[[np.ndarray], Tuple[float, np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class InnerSolution:
    zeta_star: np.ndarray
    sigma_star: np.ndarray   # (-d2F/dzeta2)^-1 at the mode
    K_star: np.ndarray       # lower Cholesky factor of sigma_star
    F_at_mode: float
    iterations: int
    grad_norm: float = 0.0

    @property
    def d(self) -> int:
        return len(self.zeta_star)

    @property
    def log_det_sigma(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self.K_star)))) if self.d else 0.0


@dataclass(frozen=True)
class SeriesDerivBundle:
    """l_j, its gradient and Hessian over the Psi entries series j depends on."""
    series_id: str
    loglik: float
    grad: Optional[np.ndarray]
    hess: Optional[np.ndarray]
    indices: np.ndarray
    integral_count: int
    inner_iterations: int
    grid_points: int
    wall_time: float


@dataclass(frozen=True)
class PanelEvaluation:
    loglik: float
    grad: Optional[np.ndarray]
    hess: Optional[np.ndarray]
    bundles: Tuple[SeriesDerivBundle, ...]
    Q: int
    wall_time: float

    @property
    def integral_count(self) -> int:
        return int(sum(b.integral_count for b in self.bundles))

    @property
    def inner_iterations(self) -> int:
        return int(max((b.inner_iterations for b in self.bundles), default=0))


@dataclass(frozen=True)
class PosteriorSummary:
    series_id: str
    zeta_mean: np.ndarray
    zeta_cov: np.ndarray
    U_hat: np.ndarray
    U_cov: np.ndarray


# ---------------------------------------------------------------------------
# generic mode finding and adaptive integration


def _spd_factor(neg_hess: np.ndarray):
    try:
        return linalg.cho_factor(neg_hess, lower=True)
    except linalg.LinAlgError:
        return None


def find_mode(exponent: Exponent, d: int, tol: float = 1e-8, max_iter: int = 50,
              max_halvings: int = 10, label: str = '') -> InnerSolution:
    """Newton-Raphson with step halving for the maximum of a concave-near-mode exponent, from zeta = 0."""
    zeta = np.zeros(d)
    F, g, H = exponent(zeta)
    if d == 0:
        return InnerSolution(zeta, np.zeros((0, 0)), np.zeros((0, 0)), float(F), 0)
    iterations = 0
    while True:
        grad_norm = float(np.max(np.abs(g))) if d else 0.0
        if grad_norm <= tol:
            break
        if iterations >= max_iter:
            raise InnerModeError(f"mode search did not converge in {max_iter} iterations",
                                 series=label, grad_norm=grad_norm)
        neg_hess = -H
        factor = _spd_factor(neg_hess)
        if factor is None:
            ridge = INNER_RIDGE * max(1.0, float(np.max(np.abs(np.diag(neg_hess)))))
            factor = _spd_factor(neg_hess + ridge * np.eye(d))
            if factor is None:
                raise InnerModeError("negated Hessian of the exponent is not positive definite",
                                     series=label, grad_norm=grad_norm)
        step = linalg.cho_solve(factor, g)
        iterations += 1
        scale = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            candidate = zeta + scale * step
            try:
                Fc, gc, Hc = exponent(candidate)
            except (DivergenceError, DegenerateProbabilityError):
                Fc = -np.inf
            if np.isfinite(Fc) and Fc >= F:
                zeta, F, g, H = candidate, Fc, gc, Hc
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            # F is flat to round-off: accept if the gradient is already tiny
            if grad_norm <= math.sqrt(tol):
                break
            raise InnerModeError("step halving failed to increase the exponent",
                                 series=label, grad_norm=grad_norm)
        logger.debug(f"mode search {label}: iter {iterations}, F={F:.10g}, |g|={grad_norm:.3e}")

    factor = _spd_factor(-H)
    if factor is None:
        raise InnerModeError("exponent is not locally concave at the mode", series=label,
                             grad_norm=float(np.max(np.abs(g))) if d else 0.0)
    sigma_star = linalg.cho_solve(factor, np.eye(d))
    sigma_star = 0.5 * (sigma_star + sigma_star.T)
    K_star = linalg.cholesky(sigma_star, lower=True)
    return InnerSolution(zeta_star=zeta, sigma_star=sigma_star, K_star=K_star, F_at_mode=float(F),
                         iterations=iterations, grad_norm=float(np.max(np.abs(g))) if d else 0.0)


def laplace_from_solution(solution: InnerSolution) -> float:
    return 0.5 * solution.log_det_sigma + solution.F_at_mode


def adapted_grid(solution: InnerSolution, Q: int) -> AdaptedGrid:
    return adapt(tensor_grid(gauss_hermite(Q), solution.d), solution.zeta_star, solution.K_star)


def integral_count(n_relevant: int, want_derivs: int) -> int:
    """Conceptual d-dimensional integrals: one for l, s for the gradient, s(s+1) for the Hessian."""
    s = n_relevant
    return {0: 1, 1: 1 + s, 2: 1 + s + s * (s + 1)}[want_derivs]


# ---------------------------------------------------------------------------
# per-series pieces


def _series(panel: PanelData, spec: ModelSpec, j: int, psi) -> Tuple[SeriesData, SeriesTheta]:
    if not 0 <= j < panel.J:
        raise ContractError(f"series index {j} out of range for J={panel.J}")
    return panel.series[j], spec.constraints.series_theta(j, psi)


def inner_exponent(panel: PanelData, spec: ModelSpec, j: int, psi, zeta, want_derivs: int = 2):
    """F_j(zeta; Psi) with its zeta-gradient and zeta-Hessian.

    zeta may be a single point (d,) or a batch (B, d). In a batch, points where the
    conditional variance underflows get F = -inf.
    """
    series, theta = _series(panel, spec, j, psi)
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape[-1] != spec.d or not np.all(np.isfinite(zeta)):
        raise ContractError(f"zeta must be finite with dimension {spec.d}")
    L = lambda_to_L(theta.lam, spec.structure)
    out = glarma_filter(series, zeta, series.R @ L, series.X @ theta.beta, theta.arma, spec.family,
                        want_derivs=want_derivs, arma_derivs=False, drop_degenerate=zeta.ndim == 2)
    F = out.loglik - 0.5 * np.sum(zeta ** 2, axis=-1)
    grad = None if out.grad is None else out.grad - zeta
    hess = None if out.hess is None else out.hess - np.eye(spec.d)
    return F, grad, hess


def inner_mode(panel: PanelData, spec: ModelSpec, j: int, psi) -> InnerSolution:
    series = panel.series[j]

    def exponent(zeta):
        F, g, H = inner_exponent(panel, spec, j, psi, zeta)
        return float(F), g, H

    solution = find_mode(exponent, spec.d, tol=spec.inner_tol, max_iter=spec.inner_max_iter,
                         max_halvings=spec.inner_max_halvings, label=series.series_id)
    logger.debug(f"series {series.series_id}: mode found in {solution.iterations} iterations")
    return solution


def laplace_loglik(panel: PanelData, spec: ModelSpec, j: int, psi) -> float:
    if spec.d == 0:
        return agq_series(panel, spec, j, psi, 1, want_derivs=0).loglik
    return laplace_from_solution(inner_mode(panel, spec, j, psi))


def _require_mass(F: np.ndarray, series_id: str) -> None:
    if not np.any(np.isfinite(F)):
        raise DegenerateProbabilityError("conditional variance is numerically zero at every quadrature point",
                                         series=series_id)


def _conditional_at_points(series: SeriesData, theta: SeriesTheta, spec: ModelSpec,
                           points: np.ndarray, want_derivs: int):
    """log f(y | zeta_I) in the outer parameterization (beta, lambda, phi, theta) for each point.

    Degenerate tail points come back with loglik -inf, so they take zero weight.
    """
    B = points.shape[0]
    lam_rows = lambda_covariate_rows_batch(points, series.R, spec.structure)
    X = np.broadcast_to(series.X[None], (B,) + series.X.shape)
    covariates = np.concatenate([X, lam_rows], axis=2)
    coefs = np.tile(np.concatenate([theta.beta, theta.lam]), (B, 1))
    return glarma_filter(series, coefs, covariates, np.zeros(series.n), theta.arma, spec.family,
                         want_derivs=want_derivs, arma_derivs=True, drop_degenerate=True)


def agq_series(panel: PanelData, spec: ModelSpec, j: int, psi, Q: int, want_derivs: int = 2,
               solution: Optional[InnerSolution] = None) -> SeriesDerivBundle:
    start = time.perf_counter()
    series, theta = _series(panel, spec, j, psi)
    indices, G = spec.constraints.series_jacobian(j)
    if spec.d == 0:
        out = glarma_filter(series, theta.beta, series.X, np.zeros(series.n), theta.arma, spec.family,
                            want_derivs=want_derivs, arma_derivs=True)
        loglik, g_theta, H_theta = float(out.loglik), out.grad, out.hess
        iterations, grid_points = 0, 1
    else:
        if solution is None:
            solution = inner_mode(panel, spec, j, psi)
        grid = adapted_grid(solution, Q)
        out = _conditional_at_points(series, theta, spec, grid.points, want_derivs)
        F = out.loglik - 0.5 * np.sum(grid.points ** 2, axis=1)
        _require_mass(F, series.series_id)
        loglik = grid.log_integral(F)
        g_theta = H_theta = None
        if want_derivs:
            u = grid.normalized_weights(F)
            g_theta = u @ out.grad
            if want_derivs == 2:
                H_theta = (np.einsum('b,bij->ij', u, out.hess)
                           + np.einsum('b,bi,bj->ij', u, out.grad, out.grad)
                           - np.outer(g_theta, g_theta))
        iterations, grid_points = solution.iterations, grid.size
    grad = None if g_theta is None else G.T @ g_theta
    hess = None
    if H_theta is not None:
        hess = G.T @ H_theta @ G
        hess = 0.5 * (hess + hess.T)
    return SeriesDerivBundle(
        series_id=series.series_id, loglik=float(loglik), grad=grad, hess=hess, indices=indices,
        integral_count=integral_count(len(indices), want_derivs), inner_iterations=iterations,
        grid_points=grid_points, wall_time=time.perf_counter() - start,
    )


def panel_loglik(psi, Q: int, panel: PanelData, spec: ModelSpec, want_derivs: int = 2,
                 workers: int = 1) -> PanelEvaluation:
    """Sum of per-series AGQ log-likelihoods and derivatives over the full Psi layout.

    Series are evaluated concurrently when workers > 1; the reduction always runs in
    series order so the result does not depend on the worker count.
    """
    start = time.perf_counter()
    psi = np.asarray(psi, dtype=float)
    S = spec.n_params

    def evaluate(j: int) -> SeriesDerivBundle:
        try:
            return agq_series(panel, spec, j, psi, Q, want_derivs=want_derivs)
        except Exception as e:
            raise SeriesEvaluationError(j, panel.series[j].series_id, e) from e

    if workers > 1 and panel.J > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            bundles: List[SeriesDerivBundle] = list(executor.map(evaluate, range(panel.J)))
    else:
        bundles = [evaluate(j) for j in range(panel.J)]

    loglik = math.fsum(b.loglik for b in bundles)
    grad = np.zeros(S) if want_derivs >= 1 else None
    hess = np.zeros((S, S)) if want_derivs == 2 else None
    for b in bundles:
        if grad is not None:
            grad[b.indices] += b.grad
        if hess is not None:
            hess[np.ix_(b.indices, b.indices)] += b.hess
    elapsed = time.perf_counter() - start
    logger.debug(f"panel loglik at Q={Q}: {loglik:.10g} ({elapsed:.3f}s, {len(bundles)} series)")
    return PanelEvaluation(loglik=loglik, grad=grad, hess=hess, bundles=tuple(bundles), Q=Q,
                           wall_time=elapsed)


def series_posterior(panel: PanelData, spec: ModelSpec, j: int, psi, Q: int) -> PosteriorSummary:
    """Posterior mean and covariance of zeta_j and U_j = L zeta_j on the adapted grid."""
    series, theta = _series(panel, spec, j, psi)
    d = spec.d
    if d == 0:
        empty = np.zeros(0)
        return PosteriorSummary(series.series_id, empty, np.zeros((0, 0)), empty, np.zeros((0, 0)))
    solution = inner_mode(panel, spec, j, psi)
    grid = adapted_grid(solution, Q)
    F, _, _ = inner_exponent(panel, spec, j, psi, grid.points, want_derivs=0)
    _require_mass(F, series.series_id)
    u = grid.normalized_weights(F)
    mean = u @ grid.points
    centred = grid.points - mean
    cov = np.einsum('b,bi,bj->ij', u, centred, centred)
    L = lambda_to_L(theta.lam, spec.structure)
    return PosteriorSummary(series.series_id, mean, cov, L @ mean, L @ cov @ L.T)
