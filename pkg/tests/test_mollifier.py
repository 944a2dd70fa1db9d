import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.errors import DomainError
from app.lab.kernels import KernelShape
from app.lab.quadrature import integrate, uniform_edges
from app.lab.mollifier import (
    ApproximationParams,
    IndicatorSign,
    build_smoothed_indicator,
    certified_window,
    certify,
    fourier_transform_numeric,
    approximate_identity,
    identity_profile,
    tail_bound_log,
    truncate_to_polynomial,
    truncation_bound_log,
)

PARAMS = ApproximationParams(delta=4.0, A=3.0)


@pytest.fixture(scope="module")
def plus():
    return build_smoothed_indicator(PARAMS, IndicatorSign.PLUS)


@pytest.fixture(scope="module")
def minus():
    return build_smoothed_indicator(PARAMS, IndicatorSign.MINUS)


def test_params():
    assert PARAMS.bandwidth == 4096.0
    assert PARAMS.support(IndicatorSign.PLUS) == pytest.approx((-1 / 64, 0.25 + 1 / 64))
    assert PARAMS.support(IndicatorSign.MINUS) == pytest.approx((1 / 8 - 1 / 64, 0.25 - 1 / 8 + 1 / 64))
    with pytest.raises(ValidationError):
        ApproximationParams(delta=2.0, A=3.0)
    with pytest.raises(ValidationError):
        ApproximationParams(delta=4.0, A=3.0, nu=61)


@pytest.mark.parametrize("shape", list(KernelShape))
def test_identity_profile_peak(shape):
    assert identity_profile(0.0, shape) == pytest.approx(1.0)
    assert np.all(identity_profile(np.linspace(-3, 3, 61), shape) <= 1.0 + 1e-15)


def test_sandwich_order(plus, minus):
    x = np.linspace(-0.1, 0.35, 4001)
    gp, gm = plus(x), minus(x)
    assert np.all(gm >= -1e-12)
    assert np.all(gm <= gp + 1e-12)
    assert np.all(gp <= 1.0 + 1e-12)
    assert plus(0.125) == pytest.approx(1.0, abs=1e-9)
    assert minus(0.0) == pytest.approx(0.0, abs=1e-8)


def test_transform_matches_quadrature(plus):
    xi = np.array([0.0, 100.0, 1000.0, 3000.0])
    window = 200.0 / plus.bandwidth
    numeric = fourier_transform_numeric(plus, xi, plus.lo - window, plus.hi + window, 0.5 / plus.bandwidth)
    np.testing.assert_allclose(numeric, plus.hat(xi), atol=1e-8)
    assert np.all(plus.hat(np.array([-4096.0, 5000.0])) == 0.0)


def test_zeroth_moment_is_value_at_zero(plus):
    mu = plus.scaled_moments(2)
    assert (mu[0] * plus.bandwidth).real == pytest.approx(float(plus(0.0)), rel=1e-9)


def test_fourier_norm_bound(plus, minus):
    for ind in (plus, minus):
        assert 0.0 < ind.l1_fourier_norm() <= 2.0 * PARAMS.bandwidth


def test_convolution_agrees_with_closed_form(plus):
    assert plus.convolution_check([0.0, 0.1, 0.26]) < 1e-9


def test_truncation_bound_values():
    assert truncation_bound_log(4.0, 3.0, 1) == pytest.approx(math.log(10.0) + 27 * math.log(4.0))
    assert truncation_bound_log(4.0, 3.0, 2, x_window=0.5) == pytest.approx(
        2 * math.log(math.pi) - math.log(2.0) + math.log(2.0) + 18 * math.log(4.0))
    # the nominal degree Δ^{10A} meets the -Δ^A target at Δ = 4 but not at Δ = 3
    assert truncation_bound_log(4.0, 3.0, 4.0 ** 30) <= -4.0 ** 3
    assert truncation_bound_log(3.0, 3.0, 3.0 ** 30) > -3.0 ** 3


def test_certified_window_is_tight():
    B, nu, tol = 4096.0, 8, 1e-10
    w = certified_window(B, nu, tol, l1_norm=3.0)
    assert tail_bound_log(B, nu, w, 3.0) <= math.log(tol)
    assert tail_bound_log(B, nu, 1.001 * w, 3.0) > math.log(tol)


def test_truncation_on_certified_window(plus):
    norm = plus.l1_fourier_norm()
    w = certified_window(plus.bandwidth, 8, 1e-10, l1_norm=norm)
    trunc = truncate_to_polynomial(plus, 8, x_window=w)
    assert trunc.gap <= 1e-9
    assert "window_too_wide" not in trunc.flags
    assert np.all(trunc.log_coefficient_margin >= 0)
    assert trunc(0.0)[()] == pytest.approx(complex(float(plus(0.0))), abs=1e-10)


def test_wide_window_flagged(plus):
    trunc = truncate_to_polynomial(plus, 16, x_window=0.5)
    assert "window_too_wide" in trunc.flags
    with pytest.raises(DomainError):
        truncate_to_polynomial(plus, 61)


def test_certificate():
    cert = certify(PARAMS, nus=(4, 8))
    assert cert.item1_holds and cert.item2_holds and cert.item5_holds
    assert cert.gap_monotone
    assert cert.nominal_degree_holds
    assert cert.convolution_error < 1e-9
    assert len(cert.truncations) == 4
    for entry in cert.truncations:
        assert entry.gap_certified <= 1e-9
        assert entry.min_log_coefficient_margin >= 0
    assert cert.midpoint_plus == pytest.approx(1.0, abs=1e-9)


def test_approximate_identity_has_unit_mass():
    mass = integrate(lambda x: approximate_identity(x, KernelShape.JACKSON), uniform_edges(-50.0, 50.0, 1.0))
    assert mass == pytest.approx(1.0, abs=1e-6)
    x = np.linspace(-2.0, 2.0, 9)
    ratio = approximate_identity(x, KernelShape.JACKSON) / identity_profile(x, KernelShape.JACKSON)
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12)
