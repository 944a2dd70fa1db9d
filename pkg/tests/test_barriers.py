import math

import numpy as np
import pytest

from app.errors import ConfigError, DomainError
from app.lab.barriers import (
    BarrierSpec,
    WalkConfig,
    barrier_values,
    good_set_count,
    moment_report,
    slope,
    spread_statistics,
    symmetrize,
    synthetic_tail_samples,
    tail_statistics,
)
from app.lab.models import FieldLayout, LevelMoments, sample_field
from app.lab.schemas import Convention


def test_left_tail_config():
    config = WalkConfig.build(8, 2.0, Convention.THM1)
    assert (config.n0, config.nL) == (2, 6)
    assert config.grid_step == pytest.approx(math.exp(-4))
    assert list(config.levels) == [2, 3, 4, 5, 6]
    assert config.alpha == pytest.approx(1 - 0.75 * math.log(8) / 8)
    assert "y_above_left_tail_range" in config.flags
    assert config.recentering == pytest.approx(8 - 0.75 * math.log(8))
    assert config.proposition_offset == pytest.approx(config.recentering - 200.0)


def test_right_tail_config():
    config = WalkConfig.build(20, 12.0, Convention.THM3)
    assert config.n0 == 0
    assert config.nL == math.floor(20 - math.log(100))
    assert config.flags == ["y_outside_right_tail_range"]


def test_config_from_height():
    config = WalkConfig.from_height(1e30, 1.0)
    assert config.n == math.floor(math.log(math.log(1e30)))
    with pytest.raises(ConfigError):
        WalkConfig.from_height(10.0, 1.0)


def test_empty_level_range():
    with pytest.raises(ConfigError):
        WalkConfig.build(4, 3.0, Convention.THM1)


def test_tampered_config_rejected():
    config = WalkConfig.build(8, 2.0).model_copy(update={"nL": 7})
    with pytest.raises(ConfigError):
        barrier_values(config)


def test_symmetrize():
    assert symmetrize(math.log, 3, 2, 6, 8) == pytest.approx(0.0)
    assert symmetrize(lambda x: x, 3, 2, 6, 8) == 1.0
    assert symmetrize(lambda x: x, 5, 2, 6, 8) == 1.0
    assert symmetrize(lambda x: x, 6, 2, 6, 8) == 0.0


def test_left_tail_barriers_ordered():
    spec = barrier_values(WalkConfig.build(40, 3.0, Convention.THM1))
    assert spec.generator == "thm1"
    assert np.all(spec.L <= spec.U)
    assert spec.ks[0] == 3 and spec.ks[-1] == 37


def test_right_tail_terminal_window():
    config = WalkConfig.build(20, 12.0, Convention.THM3)
    spec = barrier_values(config)
    assert spec.U[-1] == pytest.approx(20 - 0.75 * math.log(20) + 12.0)
    assert spec.U[-1] - spec.L[-1] == pytest.approx(10.0)


def test_full_convention_has_no_barriers():
    with pytest.raises(ConfigError):
        barrier_values(WalkConfig.build(6, 0.0, Convention.FULL))


def test_vacuous_barriers_count_every_point(partition):
    config = WalkConfig.build(8, 2.0)
    moments = LevelMoments.from_partition(partition, config.levels)
    field = sample_field(0, config, moments)
    assert good_set_count(field, BarrierSpec.vacuous(config.levels)) == config.layout().grid.size
    closed = BarrierSpec.custom(list(config.levels), [1.0] * len(config.levels), [0.0] * len(config.levels))
    assert good_set_count(field, closed) == 0


def test_moment_report(partition):
    config = WalkConfig.build(8, 2.0)
    moments = LevelMoments.from_partition(partition, config.levels)
    report = moment_report(config, barrier_values(config), 200, [1, 2], moments)
    assert 0.0 <= report.pz_lower <= 1.0
    assert report.same_set_ratio <= report.p_nonempty.value + 1e-12
    assert len(report.per_seed) == 2
    assert report.mean_count.n == 400


def test_moment_report_paley_zygmund(partition):
    config = WalkConfig.build(10, 4.0)
    moments = LevelMoments.from_partition(partition, config.levels)
    report = moment_report(config, barrier_values(config), 400, [1], moments)
    assert "degenerate" not in report.flags
    assert 0.0 < report.pz_lower <= 1.0
    assert report.paley_zygmund_holds()


def test_moment_report_argument_checks(partition):
    config = WalkConfig.build(8, 2.0)
    moments = LevelMoments.from_partition(partition, config.levels)
    spec = barrier_values(config)
    with pytest.raises(DomainError):
        moment_report(config, spec, 50, [1], moments)
    with pytest.raises(DomainError):
        moment_report(config, spec, 200, [], moments)


def test_synthetic_survival():
    x = synthetic_tail_samples(0, 20_000)
    assert np.all(x >= 0.5)
    assert np.mean(x > 1.0) == pytest.approx(2 * math.exp(-1), abs=0.02)


def test_tail_fit_recovers_exponent():
    x = synthetic_tail_samples(1, 20_000)
    fit = tail_statistics(x, math.inf, [1.0, 1.5, 2.0, 2.5, 3.0, 3.5])
    assert fit.slope is not None
    assert abs(fit.slope + 2.0) <= max(4 * fit.slope_se, 0.15)
    for point in fit.points:
        assert point.lo <= point.p_hat <= point.hi


def test_tail_fit_flags():
    with pytest.raises(DomainError):
        tail_statistics(np.zeros(100), 8, [1.0])
    fit = tail_statistics(np.zeros(10_000), 8, [1.0, 2.0])
    assert "degenerate" in fit.flags and fit.slope is None
    sparse = tail_statistics(synthetic_tail_samples(2, 10_000), 8, [8.0, 9.0])
    assert "too_few_usable_points" in sparse.flags
    assert not any(p.usable for p in sparse.points)


def test_spread_statistics():
    stats = spread_statistics(np.arange(101, dtype=float))
    assert stats == {"median": 50.0, "iqr": 50.0}


def _brute_force_count(field, spec, slack):
    count = 0
    for g in range(field.grid.size):
        path = dict(zip(field.levels.tolist(), field.values[g].tolist()))
        if all(spec.L[i] - slack <= path[int(k)] <= spec.U[i] + slack for i, k in enumerate(spec.ks)):
            count += 1
    return count


@pytest.fixture(scope="module")
def oracle_case(partition):
    config = WalkConfig.build(8, 2.0)
    assert config.nL - config.n0 == 4
    layout = FieldLayout.uniform(1.0 / 63.0, config.levels)
    assert layout.grid.size == 64
    return layout, LevelMoments.from_partition(partition, config.levels), barrier_values(config)


def test_good_set_count_matches_brute_force(oracle_case):
    layout, moments, spec = oracle_case
    for seed in range(10):
        field = sample_field(seed, layout, moments)
        for slack in (-1.0, 0.0, 1.0):
            assert good_set_count(field, spec, slack) == _brute_force_count(field, spec, slack)


def test_good_set_count_monotone_in_slack(oracle_case):
    layout, moments, spec = oracle_case
    for seed in range(50):
        field = sample_field(seed, layout, moments)
        narrow, exact, wide = (good_set_count(field, spec, s) for s in (-1.0, 0.0, 1.0))
        assert narrow <= exact <= wide
