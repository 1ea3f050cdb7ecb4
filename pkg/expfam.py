#!/usr/bin/env python3
"""
Exponential-family conditional responses with canonical link.

Densities have the form f(y|W) = exp{y W - m b(W) + c(y)} where
b(W) = log(1 + e^W) for binary/binomial and b(W) = e^W for Poisson.
All functions accept scalars or numpy arrays.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Tuple, Union

import numpy as np
from scipy.special import expit, gammaln

from errors import DegenerateProbabilityError, DomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

W_CLAMP = 700.0
# variances below this are treated as a degenerate probability
MIN_VARIANCE = 1e-300


class Family(str, Enum):
    BINARY = 'binary'
    BINOMIAL = 'binomial'
    POISSON = 'poisson'

    @property
    def is_binomial(self) -> bool:
        return self in (Family.BINARY, Family.BINOMIAL)

    @classmethod
    def parse(cls, value: Union[str, 'Family']) -> 'Family':
        try:
            return cls(value)
        except ValueError:
            raise DomainError(f"unknown family '{value}' (expected one of {[f.value for f in cls]})")


@dataclass(frozen=True)
class ConditionalMoments:
    mu: np.ndarray
    sigma2: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.sigma2)


def _checked(w: ArrayLike) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise DomainError("state value W must be finite")
    return np.clip(w, -W_CLAMP, W_CLAMP)


def cumulant(w: ArrayLike, family: Family, order: int = 0) -> np.ndarray:
    """Return b(w) or its derivative of the given order (0..3)."""
    if order not in (0, 1, 2, 3):
        raise DomainError(f"cumulant order must be 0..3, got {order}")
    w = _checked(w)
    family = Family.parse(family)
    if family is Family.POISSON:
        return np.exp(w)
    if order == 0:
        # log(1 + e^w) without overflow
        return np.logaddexp(0.0, w)
    p = expit(w)
    if order == 1:
        return p
    v = p * (1.0 - p)
    if order == 2:
        return v
    return v * (1.0 - 2.0 * p)


def moments(w: ArrayLike, m: ArrayLike, family: Family) -> ConditionalMoments:
    m = np.asarray(m, dtype=float)
    return ConditionalMoments(mu=m * cumulant(w, family, 1), sigma2=m * cumulant(w, family, 2))


def log_normalizer(y: ArrayLike, m: ArrayLike, family: Family) -> np.ndarray:
    """c(y): log binomial coefficient, or -log y! for Poisson."""
    y = np.asarray(y, dtype=float)
    family = Family.parse(family)
    if family is Family.POISSON:
        return -gammaln(y + 1.0)
    m = np.asarray(m, dtype=float)
    return gammaln(m + 1.0) - gammaln(y + 1.0) - gammaln(m - y + 1.0)


def check_support(y: ArrayLike, m: ArrayLike, family: Family) -> None:
    y = np.asarray(y, dtype=float)
    m = np.asarray(m, dtype=float)
    family = Family.parse(family)
    if not np.all(np.isfinite(y)) or np.any(y != np.round(y)) or np.any(y < 0):
        raise DomainError("responses must be non-negative integers")
    if family.is_binomial:
        if np.any(m < 1) or np.any(m != np.round(m)):
            raise DomainError("trial counts m must be positive integers")
        if np.any(y > m):
            raise DomainError("binomial response exceeds its trial count")
        if family is Family.BINARY and np.any(m != 1):
            raise DomainError("binary responses require m = 1")


def log_density(y: ArrayLike, w: ArrayLike, m: ArrayLike, family: Family) -> np.ndarray:
    """Exact log f(y|W), including c(y)."""
    family = Family.parse(family)
    check_support(y, m, family)
    y = np.asarray(y, dtype=float)
    m = np.asarray(m, dtype=float)
    return y * _checked(w) - m * cumulant(w, family, 0) + log_normalizer(y, m, family)


def _curvature_ratio(w: np.ndarray, family: Family) -> Tuple[np.ndarray, np.ndarray]:
    # g = b'''/(2 b'') and its derivative in w
    if family is Family.POISSON:
        return np.full_like(w, 0.5), np.zeros_like(w)
    p = expit(w)
    return 0.5 - p, -p * (1.0 - p)


@dataclass(frozen=True)
class ResidualTerms:
    mu: np.ndarray
    sigma2: np.ndarray
    e: np.ndarray
    de: np.ndarray
    d2e: np.ndarray
    degenerate: np.ndarray


def residual_terms(y: ArrayLike, w: ArrayLike, m: ArrayLike, family: Family,
                   strict: bool = True) -> ResidualTerms:
    """Moments, Pearson residual and its first two derivatives in W.

    With strict=False a numerically zero variance is flagged in `degenerate`
    instead of raising; the residual terms at those entries are placeholders.
    """
    family = Family.parse(family)
    w = _checked(w)
    y = np.asarray(y, dtype=float)
    mom = moments(w, m, family)
    degenerate = mom.sigma2 < MIN_VARIANCE
    if strict and np.any(degenerate):
        raise DegenerateProbabilityError("conditional variance is numerically zero")
    sigma = np.sqrt(np.where(degenerate, 1.0, mom.sigma2))
    e = (y - mom.mu) / sigma
    g, dg = _curvature_ratio(w, family)
    # sigma' = sigma * g
    de = -sigma - e * g
    d2e = -sigma * g - de * g - e * dg
    return ResidualTerms(mu=mom.mu, sigma2=mom.sigma2, e=e, de=de, d2e=d2e, degenerate=degenerate)


def pearson_residual(y: ArrayLike, w: ArrayLike, m: ArrayLike, family: Family,
                     second: bool = False):
    """Pearson residual e = (y - mu)/sigma with de/dW (and d2e/dW2 when second=True)."""
    terms = residual_terms(y, w, m, family)
    if not second:
        return terms.e, terms.de
    return terms.e, terms.de, terms.d2e


def sample(w: ArrayLike, m: ArrayLike, family: Family, rng: np.random.Generator) -> np.ndarray:
    """Draw from f(.|W) using the supplied generator."""
    family = Family.parse(family)
    w = _checked(w)
    if family is Family.POISSON:
        return rng.poisson(np.exp(w))
    p = expit(w)
    if family is Family.BINARY:
        return (rng.random(np.shape(p)) < p).astype(np.int64)
    return rng.binomial(np.asarray(m, dtype=np.int64), p)
