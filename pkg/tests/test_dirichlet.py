import math

import numpy as np
import pytest

from app.errors import DomainError, OutOfRangeError, PreconditionError
from app.lab.dirichlet import (
    DirichletPoly,
    discretization_ratio,
    low_prime_sum,
    mean_value_gap,
    partial_sums,
    prime_increments,
    smoothed_euler_product,
    sup_bound_discretized,
)
from app.lab.schemas import Convention


def test_poly_validation():
    with pytest.raises(DomainError):
        DirichletPoly(np.array([2, 1]), np.array([1.0, 1.0]))
    with pytest.raises(DomainError):
        DirichletPoly.from_terms([(3, 1.0), (3, 2.0)])
    with pytest.raises(DomainError):
        DirichletPoly(np.array([0, 1]), np.array([1.0, 1.0]))


def test_poly_evaluation():
    poly = DirichletPoly.from_terms([(1, 1.0), (2, 0.5j)])
    s = 0.5 + 3.0j
    assert poly(s)[0] == pytest.approx(1.0 + 0.5j * 2.0 ** (-s))
    assert poly.length == 2


def test_thm1_walk_starts_at_zero(partition):
    sample = partial_sums(1000.0, 0.0, 0, 2, partition, Convention.THM1)
    assert sample.values[0] == 0.0
    assert sample.ks.tolist() == [0, 1, 2]


def test_thm3_walk_matches_direct_prime_sum(partition):
    t, h = 1000.0, 0.3
    sample = partial_sums(t, h, 0, 2, partition, Convention.THM3)
    primes = partition.primes_up_to(1613).astype(float)
    direct = np.sum(primes ** -0.5 * np.cos((t + h) * np.log(primes))
                    + 0.5 / primes * np.cos(2 * (t + h) * np.log(primes)))
    assert sample.values[-1] == pytest.approx(direct, abs=1e-12)
    assert low_prime_sum(t, h, 2, partition) == pytest.approx(direct, abs=1e-12)


def test_walk_increments_are_block_sums(partition):
    t = 5000.0
    thm1 = partial_sums(t, 0.0, 0, 2, partition, Convention.THM1)
    thm3 = partial_sums(t, 0.0, 0, 2, partition, Convention.THM3)
    np.testing.assert_allclose(np.diff(thm1.values), np.diff(thm3.values), atol=1e-13)
    assert thm3.values[0] == pytest.approx(prime_increments(np.array([2]), t)[0])


def test_walk_offset_and_range(partition):
    with pytest.raises(DomainError):
        partial_sums(1000.0, 1.5, 0, 2, partition)
    with pytest.raises(OutOfRangeError):
        partial_sums(1000.0, 0.0, 0, 3, partition)


def test_mean_value_gap_small():
    poly = DirichletPoly(np.arange(1, 11), np.ones(10))
    gap = mean_value_gap(poly, 1000.0)
    assert gap < 1.0
    assert mean_value_gap(poly, 1000.0, n_quadrature=64) == pytest.approx(gap)


def test_mean_value_gap_needs_short_polynomial():
    poly = DirichletPoly(np.arange(1, 201), np.ones(200))
    with pytest.raises(PreconditionError):
        mean_value_gap(poly, 100.0)


def test_discretized_bound_dominates_dense_grid():
    n = np.arange(1, 101)
    poly = DirichletPoly(n, np.ones(n.size))
    assert discretization_ratio(poly, 1000.0, 1, points=801) <= 1.0


def test_discretized_bound_level_range():
    poly = DirichletPoly(np.arange(1, 101), np.ones(100))
    k_max = int(math.floor(math.log(math.log(100))))
    with pytest.raises(DomainError):
        sup_bound_discretized(poly, 1000.0, k_max + 1)


@pytest.mark.slow
def test_smoothed_euler_product_near_one():
    result = smoothed_euler_product(1000.0, 0.0, math.exp(math.e))
    assert abs(result.value - 1.0) <= 0.05
    assert result.abs_err <= 1e-6


def test_euler_product_domain():
    with pytest.raises(DomainError):
        smoothed_euler_product(50.0, 0.0, 10.0)
    with pytest.raises(DomainError):
        smoothed_euler_product(1000.0, 0.0, 2.0)
