#!/usr/bin/env python3
"""
Single-series GLARMA filter with exact first and second derivatives.

State:    W_t = c_t'delta + offset_t + alpha_t
ARMA:     alpha_t = sum_l phi_l (alpha_{t-l} + e_{t-l}) + sum_l theta_l e_{t-l}
Residual: e_t = (y_t - mu_t) / sigma_t

Pre-sample values alpha_t = e_t = 0 for t <= 0. Parameter layout of the
returned derivatives is (linear coefficients, phi_1..phi_p, theta_1..theta_q).

The filter is vectorized over a leading batch axis so that every adapted
quadrature point of one series is run through a single recursion.
"""
import logging
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from errors import ContractError, DegenerateProbabilityError, DivergenceError, StationarityWarning
from expfam import W_CLAMP, Family, cumulant, log_normalizer, residual_terms

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SeriesData:
    """One observed series: responses, trials, fixed and random-effect covariates."""
    y: np.ndarray
    m: np.ndarray
    X: np.ndarray
    R: np.ndarray
    series_id: str = ''
    x_names: List[str] = field(default_factory=list)
    r_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.y)
        if n < 1:
            raise ContractError(f"series {self.series_id}: needs at least one observation")
        if self.m.shape != (n,):
            raise ContractError(f"series {self.series_id}: m has shape {self.m.shape}, expected ({n},)")
        for name, mat in (('X', self.X), ('R', self.R)):
            if mat.ndim != 2 or mat.shape[0] != n:
                raise ContractError(f"series {self.series_id}: {name} must have {n} rows, got shape {mat.shape}")
            if not np.all(np.isfinite(mat)):
                raise ContractError(f"series {self.series_id}: {name} contains non-finite values")

    @property
    def n(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class ArmaParams:
    phi: np.ndarray
    theta_ma: np.ndarray

    @classmethod
    def of(cls, phi=(), theta_ma=()) -> 'ArmaParams':
        return cls(np.asarray(phi, dtype=float).reshape(-1), np.asarray(theta_ma, dtype=float).reshape(-1))

    @property
    def p(self) -> int:
        return len(self.phi)

    @property
    def q(self) -> int:
        return len(self.theta_ma)

    def is_stationary(self) -> bool:
        if self.p == 0:
            return True
        # roots of 1 - phi_1 z - ... - phi_p z^p
        coeffs = np.concatenate([-self.phi[::-1], [1.0]])
        coeffs = np.trim_zeros(coeffs, 'f')
        if len(coeffs) <= 1:
            return True
        return bool(np.all(np.abs(np.roots(coeffs)) > 1.0))


@dataclass
class FilterOutput:
    W: np.ndarray
    alpha: np.ndarray
    e: np.ndarray
    loglik: np.ndarray
    grad: Optional[np.ndarray] = None
    hess: Optional[np.ndarray] = None


def next_alpha(alpha_past: np.ndarray, e_past: np.ndarray, arma: ArmaParams) -> np.ndarray:
    """ARMA feedback at time t from histories of length t (time on the last axis)."""
    t = alpha_past.shape[-1]
    out = np.zeros(alpha_past.shape[:-1])
    for lag, phi in enumerate(arma.phi, start=1):
        if lag <= t:
            out = out + phi * (alpha_past[..., t - lag] + e_past[..., t - lag])
    for lag, theta in enumerate(arma.theta_ma, start=1):
        if lag <= t:
            out = out + theta * e_past[..., t - lag]
    return out


def _linear_part(coefs: np.ndarray, covariates: np.ndarray, n: int):
    B, K = coefs.shape
    if covariates.ndim == 2:
        if covariates.shape != (n, K):
            raise ContractError(f"linear covariates have shape {covariates.shape}, expected ({n}, {K})")
        return (covariates @ coefs.T).T, False
    if covariates.ndim == 3:
        if covariates.shape[1:] != (n, K) or covariates.shape[0] not in (1, B):
            raise ContractError(f"linear covariates have shape {covariates.shape}, expected ({B}, {n}, {K})")
        return np.einsum('bnk,bk->bn', covariates, coefs), True
    raise ContractError(f"linear covariates must be 2-D or 3-D, got {covariates.ndim}-D")


def glarma_filter(data: SeriesData, linear_coefs, linear_covariates, offset, arma: ArmaParams,
                  family: Family, want_derivs: int = 0, arma_derivs: bool = True,
                  drop_degenerate: bool = False) -> FilterOutput:
    """Run the GLARMA recursion and return states, log-likelihood and derivatives.

    linear_coefs may be (K,) or (B, K); linear_covariates (n, K) or (B, n, K);
    offset (n,) or (B, n). Derivatives are taken with respect to the linear
    coefficients and, when arma_derivs is set, the ARMA parameters.

    With drop_degenerate, a batch member whose state diverges or whose
    conditional variance underflows gets loglik -inf and zero derivatives
    instead of failing the whole batch.
    """
    if want_derivs not in (0, 1, 2):
        raise ContractError(f"want_derivs must be 0, 1 or 2, got {want_derivs}")
    family = Family.parse(family)
    n = data.n
    coefs = np.asarray(linear_coefs, dtype=float)
    batched = coefs.ndim == 2
    coefs = np.atleast_2d(coefs)
    B, K = coefs.shape
    covariates = np.asarray(linear_covariates, dtype=float)
    linear, per_batch_covariates = _linear_part(coefs, covariates, n)
    offset = np.asarray(offset, dtype=float)
    if offset.shape[-1] != n:
        raise ContractError(f"offset has length {offset.shape[-1]}, expected {n}")
    eta = np.broadcast_to(linear + offset, (B, n))

    if arma.p and not arma.is_stationary():
        warnings.warn(f"series {data.series_id}: AR polynomial is not stationary (phi={arma.phi.tolist()})",
                      StationarityWarning, stacklevel=2)

    p, q = arma.p, arma.q
    P = K + (p + q if arma_derivs else 0)
    lags = max(p, q)
    y, m = data.y.astype(float), data.m.astype(float)

    W = np.zeros((B, n))
    alpha = np.zeros((B, n))
    e = np.zeros((B, n))
    loglik = np.full(B, float(np.sum(log_normalizer(y, m, family))))
    grad = np.zeros((B, P)) if want_derivs >= 1 else None
    hess = np.zeros((B, P, P)) if want_derivs == 2 else None
    d_alpha_hist = deque(maxlen=lags or 1)
    d_e_hist = deque(maxlen=lags or 1)
    d2_alpha_hist = deque(maxlen=lags or 1)
    d2_e_hist = deque(maxlen=lags or 1)
    dead = np.zeros(B, dtype=bool)

    for t in range(n):
        alpha[:, t] = next_alpha(alpha[:, :t], e[:, :t], arma)
        W[:, t] = eta[:, t] + alpha[:, t]
        finite = np.isfinite(W[:, t])
        if drop_degenerate:
            dead |= ~finite
            W[dead, t] = 0.0
        elif not np.all(finite):
            raise DivergenceError(t + 1, {'phi': arma.phi, 'theta': arma.theta_ma,
                                          'coefs': coefs[0]}, series=data.series_id)
        try:
            terms = residual_terms(y[t], W[:, t], m[t], family, strict=not drop_degenerate)
        except DegenerateProbabilityError as exc:
            raise DegenerateProbabilityError(str(exc), series=data.series_id, time=t + 1) from exc
        if drop_degenerate:
            dead |= terms.degenerate
            # dropped members carry a zero state forward
            alpha[dead, t] = 0.0
            W[dead, t] = 0.0
            terms.e[dead] = 0.0
            terms.de[dead] = 0.0
            terms.d2e[dead] = 0.0
        e[:, t] = terms.e
        w_t = np.clip(W[:, t], -W_CLAMP, W_CLAMP)
        loglik += y[t] * w_t - m[t] * cumulant(w_t, family, 0)
        if not want_derivs:
            continue

        d_alpha = np.zeros((B, P))
        for lag in range(1, p + 1):
            if lag <= t:
                d_alpha += arma.phi[lag - 1] * (d_alpha_hist[-lag] + d_e_hist[-lag])
                if arma_derivs:
                    d_alpha[:, K + lag - 1] += alpha[:, t - lag] + e[:, t - lag]
        for lag in range(1, q + 1):
            if lag <= t:
                d_alpha += arma.theta_ma[lag - 1] * d_e_hist[-lag]
                if arma_derivs:
                    d_alpha[:, K + p + lag - 1] += e[:, t - lag]
        d_W = d_alpha.copy()
        c_t = covariates[:, t, :] if per_batch_covariates else covariates[t]
        d_W[:, :K] += c_t
        d_e = terms.de[:, None] * d_W
        resid = y[t] - terms.mu
        grad += resid[:, None] * d_W

        if want_derivs == 2:
            d2_alpha = np.zeros((B, P, P))
            for lag in range(1, p + 1):
                if lag <= t:
                    d2_alpha += arma.phi[lag - 1] * (d2_alpha_hist[-lag] + d2_e_hist[-lag])
                    if arma_derivs:
                        a = d_alpha_hist[-lag] + d_e_hist[-lag]
                        d2_alpha[:, K + lag - 1, :] += a
                        d2_alpha[:, :, K + lag - 1] += a
            for lag in range(1, q + 1):
                if lag <= t:
                    d2_alpha += arma.theta_ma[lag - 1] * d2_e_hist[-lag]
                    if arma_derivs:
                        a = d_e_hist[-lag]
                        d2_alpha[:, K + p + lag - 1, :] += a
                        d2_alpha[:, :, K + p + lag - 1] += a
            outer = d_W[:, :, None] * d_W[:, None, :]
            d2_e = terms.d2e[:, None, None] * outer + terms.de[:, None, None] * d2_alpha
            hess += resid[:, None, None] * d2_alpha - terms.sigma2[:, None, None] * outer
            if lags:
                d2_alpha[dead] = 0.0
                d2_e[dead] = 0.0
                d2_alpha_hist.append(d2_alpha)
                d2_e_hist.append(d2_e)
        if lags:
            d_alpha[dead] = 0.0
            d_e[dead] = 0.0
            d_alpha_hist.append(d_alpha)
            d_e_hist.append(d_e)

    if hess is not None:
        hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
    if dead.any():
        logger.debug(f"series {data.series_id}: dropped {int(dead.sum())} of {B} degenerate batch members")
        loglik[dead] = -np.inf
        if grad is not None:
            grad[dead] = 0.0
        if hess is not None:
            hess[dead] = 0.0
    out = FilterOutput(W=W, alpha=alpha, e=e, loglik=loglik, grad=grad, hess=hess)
    if batched:
        return out
    return FilterOutput(W=W[0], alpha=alpha[0], e=e[0], loglik=float(loglik[0]),
                        grad=None if grad is None else grad[0],
                        hess=None if hess is None else hess[0])
