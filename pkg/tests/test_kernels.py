import numpy as np
import pytest

from app.lab.kernels import KernelShape, ScaledKernel, get_kernel
from app.lab.mollifier import fourier_transform_numeric
from app.lab.quadrature import integrate, uniform_edges


@pytest.mark.parametrize("shape", list(KernelShape))
def test_transform_normalised_and_band_limited(shape):
    kernel = get_kernel(shape)
    assert kernel.hat(0.0) == pytest.approx(1.0)
    assert np.all(kernel.hat(np.array([-1.0, 1.0, 1.5])) == 0.0)
    assert kernel.value(0.0) > 0


@pytest.mark.parametrize("shape", list(KernelShape))
def test_cdf_limits_and_derivative(shape):
    kernel = get_kernel(shape)
    assert kernel.cdf(0.0) == pytest.approx(0.5, abs=1e-15)
    assert kernel.cdf(-1e4) == pytest.approx(0.0, abs=1e-4)
    assert kernel.cdf(1e4) == pytest.approx(1.0, abs=1e-4)
    z = np.array([-3.3, -0.7, 0.2, 1.9, 5.5])
    step = 1e-5
    numeric = (kernel.cdf(z + step) - kernel.cdf(z - step)) / (2 * step)
    np.testing.assert_allclose(numeric, kernel.value(z), atol=1e-8)


def test_jackson_cdf_continuous_at_series_switch():
    kernel = get_kernel(KernelShape.JACKSON)
    z = 2e-2 / np.pi
    below, above = kernel.cdf(z * (1 - 1e-9)), kernel.cdf(z * (1 + 1e-9))
    assert abs(above - below) < 1e-10


def test_jackson_transform_matches_quadrature():
    kernel = get_kernel(KernelShape.JACKSON)
    u = np.array([0.0, 0.25, 0.6])
    numeric = fourier_transform_numeric(kernel.value, u, -400.0, 400.0, 1.0)
    np.testing.assert_allclose(numeric.real, kernel.hat(u), atol=1e-7)


@pytest.mark.parametrize("shape", list(KernelShape))
def test_unit_mass(shape):
    kernel = get_kernel(shape)
    mass = integrate(kernel.value, uniform_edges(-50.0, 50.0, 1.0))
    assert mass == pytest.approx(1.0, abs=2.0 * float(kernel.tail_mass(50.0)) + 1e-10)


def test_window_respects_envelope():
    kernel = get_kernel(KernelShape.JACKSON)
    w = kernel.window(1e-12)
    assert kernel.envelope(w) <= 1e-12
    assert kernel.envelope(0.99 * w) > 1e-12


def test_scaled_kernel_support():
    f = ScaledKernel(get_kernel(KernelShape.FEJER))
    assert f.hat(0.0) == pytest.approx(1.0)
    assert f.hat(0.2) == 0.0
