#!/usr/bin/env python3
"""
Random-effect covariance Sigma = L L' with structural zeros in L.

lambda holds the free entries of L in the order they were declared. When the
structure is built from a boolean mask the order is column-major
(half-vectorization) order.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from errors import ContractError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LStructure:
    d: int
    free: Tuple[Tuple[int, int], ...]  # 0-based (row, col), row >= col

    def __post_init__(self):
        errors = []
        seen = set()
        for row, col in self.free:
            if not (0 <= col <= row < self.d):
                errors.append(f"entry ({row + 1}, {col + 1}) is not in the lower triangle of a {self.d}x{self.d} matrix")
            if (row, col) in seen:
                errors.append(f"entry ({row + 1}, {col + 1}) declared twice")
            seen.add((row, col))
        for k in range(self.d):
            if (k, k) not in seen:
                errors.append(f"diagonal entry ({k + 1}, {k + 1}) must be free")
        if errors:
            raise ContractError("; ".join(errors))

    @classmethod
    def full(cls, d: int) -> 'LStructure':
        return cls.from_mask(np.tril(np.ones((d, d), dtype=bool)))

    @classmethod
    def diagonal(cls, d: int) -> 'LStructure':
        return cls(d, tuple((k, k) for k in range(d)))

    @classmethod
    def from_mask(cls, mask) -> 'LStructure':
        mask = np.asarray(mask, dtype=bool)
        d = mask.shape[0]
        if np.any(np.triu(mask, 1)):
            raise ContractError("L mask must be lower triangular")
        free = tuple((row, col) for col in range(d) for row in range(col, d) if mask[row, col])
        return cls(d, free)

    @classmethod
    def from_pairs(cls, d: int, pairs: Iterable[Sequence[int]]) -> 'LStructure':
        """Build from 1-based (row, col) pairs, keeping their order."""
        return cls(d, tuple((int(r) - 1, int(c) - 1) for r, c in pairs))

    @property
    def size(self) -> int:
        return len(self.free)

    @property
    def mask(self) -> np.ndarray:
        out = np.zeros((self.d, self.d), dtype=bool)
        for row, col in self.free:
            out[row, col] = True
        return out

    @property
    def rows(self) -> np.ndarray:
        return np.array([r for r, _ in self.free], dtype=int)

    @property
    def cols(self) -> np.ndarray:
        return np.array([c for _, c in self.free], dtype=int)

    def names(self) -> List[str]:
        return [f"L[{r + 1},{c + 1}]" for r, c in self.free]

    def diagonal_positions(self) -> List[int]:
        return [i for i, (r, c) in enumerate(self.free) if r == c]


def _check_length(lam, s: LStructure) -> np.ndarray:
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if len(lam) != s.size:
        raise ContractError(f"lambda has {len(lam)} entries, structure has {s.size} free entries")
    return lam


def lambda_to_L(lam, s: LStructure) -> np.ndarray:
    lam = _check_length(lam, s)
    L = np.zeros((s.d, s.d))
    if s.size:
        L[s.rows, s.cols] = lam
    return L


def sigma(lam, s: LStructure) -> np.ndarray:
    L = lambda_to_L(lam, s)
    return L @ L.T


def correlation(cov: np.ndarray) -> np.ndarray:
    sd = np.sqrt(np.diag(cov))
    with np.errstate(invalid='ignore', divide='ignore'):
        corr = cov / np.outer(sd, sd)
    return corr


def lambda_covariate_row(zeta, r, s: LStructure) -> np.ndarray:
    """Row (or rows, when r is n x d) whose product with lambda equals (r'L) zeta."""
    zeta = np.asarray(zeta, dtype=float).reshape(-1)
    r = np.asarray(r, dtype=float)
    if zeta.shape != (s.d,) or r.shape[-1] != s.d:
        raise ContractError(f"zeta and r must have dimension {s.d}")
    # entry at free (a, b) is r_a * zeta_b since (r'L) zeta = sum_ab r_a L_ab zeta_b
    return r[..., s.rows] * zeta[s.cols]


def lambda_covariate_rows_batch(points: np.ndarray, R: np.ndarray, s: LStructure) -> np.ndarray:
    """(B, n, len(lambda)) covariate tensor for a batch of zeta points."""
    points = np.asarray(points, dtype=float)
    return R[None, :, s.rows] * points[:, None, s.cols]


def normalize_signs(lam, s: LStructure) -> Tuple[np.ndarray, np.ndarray]:
    """Flip columns of L with a negative diagonal; Sigma is unchanged.

    Returns the new lambda and the +/-1 multiplier applied to each entry.
    """
    lam = _check_length(lam, s)
    flips = np.ones(s.size)
    for k in range(s.d):
        diag_index = s.free.index((k, k))
        if lam[diag_index] < 0:
            for i, (_, col) in enumerate(s.free):
                if col == k:
                    flips[i] = -1.0
    return lam * flips, flips
