import math

import numpy as np
import pytest

from app.errors import ConfigError, CovarianceError, DomainError, ResourceLimitError
from app.lab.models import (
    FieldLayout,
    LevelMoments,
    berry_esseen_gap,
    exact_field_covariance,
    exponential_moment_constant,
    field_max_ks_distance,
    field_maxima,
    gaussian_box_probability,
    gaussian_decoupling_check,
    gaussian_share,
    hierarchical_pair_covariance,
    pair_factor,
    sample_field,
    sample_gaussian_pair,
    sample_steinhaus,
    steinhaus_increments,
)
from app.lab.primes import rho_k, sk2


def test_steinhaus_sample_reproducible(partition):
    first = sample_steinhaus(7, partition, [0.0, 0.5], 2)
    again = sample_steinhaus(7, partition, [0.0, 0.5], 2)
    np.testing.assert_array_equal(first.trajectories, again.trajectories)
    assert first.trajectories.shape == (2, 3)
    for i, k in enumerate(first.ks):
        np.testing.assert_allclose(first.recompute_increment(int(k)), first.increments()[:, i], atol=1e-12)


def test_steinhaus_variance_matches_block_variance(partition):
    m = 20_000
    y = steinhaus_increments(3, partition, 2, [0.0], m)[:, 0]
    var = sk2(partition, 2)
    assert abs(np.mean(y)) < 5 * math.sqrt(var / m)
    assert np.var(y) == pytest.approx(var, abs=5 * var * math.sqrt(2.0 / m))


def test_steinhaus_increments_independent_of_threads(partition):
    serial = steinhaus_increments(11, partition, 2, [0.0, 0.25], 3000, threads=1)
    pooled = steinhaus_increments(11, partition, 2, [0.0, 0.25], 3000, threads=3)
    np.testing.assert_array_equal(serial, pooled)


def test_steinhaus_gaussian_tail(partition, monkeypatch):
    monkeypatch.setenv("ZXLB_STEINHAUS_EXACT_PRIMES", "50")
    from app.config.config import get_settings
    get_settings.cache_clear()
    y = steinhaus_increments(5, partition, 2, [0.0], 20_000)[:, 0]
    var = sk2(partition, 2)
    assert np.var(y) == pytest.approx(var, abs=5 * var * math.sqrt(2.0 / 20_000))


def test_exponential_moment_needs_order(partition):
    with pytest.raises(DomainError):
        exponential_moment_constant(0, partition, 2, 2)


def test_exponential_moment_constant(partition):
    result = exponential_moment_constant(0, partition, 0, 2, lam=1.0, replicas=5000)
    assert result.estimate.value > 1.0
    assert math.isfinite(result.constant)


def test_pair_factor_reproduces_covariance():
    a, b = pair_factor(np.array([0.5, 0.4]), np.array([0.2, -0.1]))
    np.testing.assert_allclose(a * a + b * b, [0.5, 0.4])
    np.testing.assert_allclose(2 * a * b, [0.2, -0.1])
    with pytest.raises(CovarianceError):
        pair_factor(0.5, 0.6)


def test_zero_offset_gives_equal_walks(partition):
    moments = LevelMoments.from_partition(partition, [1, 2])
    pair = sample_gaussian_pair(1, 0.0, [1, 2], moments, replicas=10)
    np.testing.assert_allclose(pair.paths[..., 0], pair.paths[..., 1], atol=1e-14)


def test_pair_needs_covariances(partition):
    moments = LevelMoments.from_partition(partition, [1, 2])
    with pytest.raises(ConfigError):
        sample_gaussian_pair(1, 0.5, [1, 2], moments)
    with pytest.raises(ConfigError):
        moments.variances_for([5])


def test_gaussian_pair_covariance(partition):
    moments = LevelMoments.from_partition(partition, [2], delta_h=0.5)
    pair = sample_gaussian_pair(2, 0.5, [2], moments, replicas=40_000)
    x = pair.increments[:, 0, :]
    assert np.mean(x[:, 0] * x[:, 1]) == pytest.approx(rho_k(partition, 2, 0.5), abs=0.02)


def test_box_probability_limits():
    assert gaussian_box_probability(1.0, 0.0, (0.0, 1.0), (0.0, 1.0)) == pytest.approx(0.3413447460685429 ** 2,
                                                                                       rel=1e-10)
    assert gaussian_box_probability(1.0, 0.7, (0.0, math.inf), (-math.inf, math.inf)) == pytest.approx(0.5)
    assert gaussian_box_probability(1.0, 0.3, (1.0, 0.0), (0.0, 1.0)) == 0.0


def test_box_probability_perfect_correlation():
    p = gaussian_box_probability(1.0, 1.0, (0.0, 1.0), (0.5, 2.0))
    assert p == pytest.approx(0.3413447460685429 - 0.19146246127401312, abs=1e-6)


def test_decoupling_bound():
    check = gaussian_decoupling_check(0.5, 0.3, (0.0, 1.0), (0.0, 1.0))
    assert check.holds
    assert check.factor == pytest.approx(2.0)
    with pytest.raises(CovarianceError):
        gaussian_decoupling_check(0.5, 0.5, (0.0, 1.0), (0.0, 1.0))


def test_berry_esseen_needs_replicas(partition):
    with pytest.raises(DomainError):
        berry_esseen_gap(0, partition, 2, (0.0, 1.0), (0.0, 1.0), 0.5, 100)


def test_berry_esseen_gap_small(partition):
    gap = berry_esseen_gap(0, partition, 2, (0.0, 1.0), (-1.0, 0.5), 0.5, 10_000)
    assert gap < 0.03


def test_gaussian_share_follows_exact_prime_cutoff(partition, monkeypatch):
    from app.config.config import get_settings
    assert gaussian_share(partition, 2) == 0.0
    monkeypatch.setenv("ZXLB_STEINHAUS_EXACT_PRIMES", "50")
    get_settings.cache_clear()
    assert 0.0 < gaussian_share(partition, 2) < 1.0
    assert gaussian_share(partition, 0) == 0.0


def test_berry_esseen_gap_unchanged_by_exact_prime_cutoff(partition, monkeypatch):
    from app.config.config import get_settings
    box_a, box_b = (0.0, 1.0), (-1.0, 0.5)
    default = berry_esseen_gap(4, partition, 2, box_a, box_b, 0.5, 10_000)
    monkeypatch.setenv("ZXLB_STEINHAUS_EXACT_PRIMES", "100000")
    get_settings.cache_clear()
    assert berry_esseen_gap(4, partition, 2, box_a, box_b, 0.5, 10_000) == default


def test_field_shared_levels(partition):
    layout = FieldLayout.uniform(0.125, [1, 2])
    moments = LevelMoments.from_partition(partition, [1, 2])
    field = sample_field(0, layout, moments)
    assert field.values.shape == (layout.grid.size, 2)
    np.testing.assert_allclose(field.marginal_variance(), np.cumsum(moments.s2))
    # h = -0.5 and h = -0.375 share the level-1 cell floor(h e) = -2
    assert field.shared_levels(0, 1) >= 1
    assert field.shared_levels(0, layout.grid.size - 1) == 0


def test_field_maxima_independent_of_threads(partition):
    layout = FieldLayout.uniform(0.05, [1, 2])
    moments = LevelMoments.from_partition(partition, [1, 2])
    serial = field_maxima(4, layout, moments, 2500, threads=1)
    pooled = field_maxima(4, layout, moments, 2500, threads=4)
    np.testing.assert_array_equal(serial, pooled)
    assert serial.shape == (2500,)


def test_grid_limits(partition):
    with pytest.raises(ResourceLimitError):
        exact_field_covariance(FieldLayout.uniform(1e-3, [1]), partition)


def test_hierarchical_pair_covariance(partition):
    moments = LevelMoments.from_partition(partition, [1, 2, 3])
    assert hierarchical_pair_covariance(moments, math.exp(-2.5)) == pytest.approx(moments.s2[0] + moments.s2[1])


def test_field_max_ks_distance_is_seeded(partition):
    layout = FieldLayout.uniform(0.125, [1, 2])
    d = field_max_ks_distance(3, layout, partition, 2000)
    assert 0.0 <= d <= 1.0
    assert field_max_ks_distance(3, layout, partition, 2000) == d
