#!/usr/bin/env python3
"""
Tests for the random-effect covariance parameterization
"""
import numpy as np
import pytest

from errors import ContractError
from ranef import (LStructure, correlation, lambda_covariate_row, lambda_covariate_rows_batch, lambda_to_L,
                   normalize_signs, sigma)

# intercept, quadratic and cubic random effects with L[2,1] and L[3,2] fixed at zero
TABLE_PAIRS = [(1, 1), (2, 2), (3, 1), (3, 3)]
TABLE_LAMBDA = [0.863, 1.442, 1.519, 2.379]


def test_full_structure_is_column_major():
    s = LStructure.full(2)
    assert s.names() == ['L[1,1]', 'L[2,1]', 'L[2,2]']
    np.testing.assert_array_equal(lambda_to_L([1, 0.5, 2], s), [[1, 0], [0.5, 2]])


def test_identity_mask():
    np.testing.assert_array_equal(lambda_to_L([1, 1], LStructure.diagonal(2)), np.eye(2))


def test_masked_structure_in_declared_order():
    s = LStructure.from_pairs(3, TABLE_PAIRS)
    L = lambda_to_L(TABLE_LAMBDA, s)
    assert L[0, 0] == 0.863 and L[1, 1] == 1.442 and L[2, 0] == 1.519 and L[2, 2] == 2.379
    assert L[1, 0] == 0 and L[2, 1] == 0
    mask = np.array([[1, 0, 0], [0, 1, 0], [1, 0, 1]], dtype=bool)
    assert LStructure.from_mask(mask).size == 4


def test_table_variances_and_correlation():
    cov = sigma(TABLE_LAMBDA, LStructure.from_pairs(3, TABLE_PAIRS))
    np.testing.assert_allclose(np.diag(cov), [0.745, 2.079, 7.967], atol=0.01)
    assert correlation(cov)[0, 2] == pytest.approx(0.538, abs=0.01)


def test_sigma_small_cases():
    np.testing.assert_allclose(sigma([1, 0.5, 2], LStructure.full(2)), [[1, 0.5], [0.5, 4.25]])
    np.testing.assert_allclose(sigma([0.3, 2.0], LStructure.diagonal(2)), np.diag([0.09, 4.0]))


def test_invalid_structures():
    with pytest.raises(ContractError):
        LStructure.from_mask(np.ones((2, 2), dtype=bool))
    with pytest.raises(ContractError):
        LStructure.from_pairs(2, [(1, 1)])
    with pytest.raises(ContractError):
        LStructure.from_pairs(2, [(1, 1), (2, 2), (1, 2)])
    with pytest.raises(ContractError):
        lambda_to_L([1.0, 2.0], LStructure.full(2))


def test_lambda_row_examples():
    s = LStructure.full(1)
    np.testing.assert_array_equal(lambda_covariate_row([2.0], [3.0], s), [6.0])
    row = lambda_covariate_row([1.0, 1.0], [1.0, 0.0], LStructure.full(2))
    np.testing.assert_array_equal(row, [1.0, 0.0, 0.0])


def test_lambda_row_identity():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d = int(rng.integers(1, 5))
        mask = np.tril(rng.random((d, d)) < 0.6) | np.eye(d, dtype=bool)
        s = LStructure.from_mask(mask)
        lam, zeta, r = rng.normal(size=s.size), rng.normal(size=d), rng.normal(size=d)
        expected = r @ lambda_to_L(lam, s) @ zeta
        assert lambda_covariate_row(zeta, r, s) @ lam == pytest.approx(expected, abs=1e-12 * (1 + abs(expected)))
        assert np.min(np.linalg.eigvalsh(sigma(lam, s))) >= -1e-12


def test_batch_rows_match_single_rows():
    rng = np.random.default_rng(1)
    s = LStructure.full(2)
    points, R = rng.normal(size=(5, 2)), rng.normal(size=(7, 2))
    batch = lambda_covariate_rows_batch(points, R, s)
    assert batch.shape == (5, 7, 3)
    for b in range(5):
        np.testing.assert_allclose(batch[b], lambda_covariate_row(points[b], R, s))


def test_normalize_signs_keeps_sigma():
    s = LStructure.full(3)
    lam = np.array([-0.8, 0.3, 0.1, 0.5, -0.2, -1.1])
    flipped, flips = normalize_signs(lam, s)
    L = lambda_to_L(flipped, s)
    assert np.all(np.diag(L) >= 0)
    np.testing.assert_allclose(sigma(flipped, s), sigma(lam, s), atol=1e-15)
    np.testing.assert_array_equal(flipped, lam * flips)
    untouched, ones = normalize_signs(np.abs(lam), s)
    np.testing.assert_array_equal(ones, 1.0)


if __name__ == "__main__":
    test_table_variances_and_correlation()
    test_lambda_row_identity()
    print("✅ random-effect parameterization checks passed")
