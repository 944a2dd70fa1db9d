# app/lab/kernels.py
"""
Nonnegative band-limited kernels F with F_hat supported in [-1, 1] and F_hat(0) = 1.

Fourier convention: F_hat(u) = ∫ F(x) e^{-2πiux} dx.

    FEJER    F(x) = sinc(x)^2             F_hat = triangle       decay x^-2
    JACKSON  F(x) = (3/4) sinc(x/2)^4     F_hat = cubic B-spline decay x^-4

with sinc(x) = sin(πx)/(πx).
"""

from abc import ABC, abstractmethod
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy import special


class KernelShape(str, Enum):
    FEJER = "fejer"
    JACKSON = "jackson"

    @classmethod
    def get_default(cls) -> "KernelShape":
        return cls.FEJER


class Kernel(ABC):
    shape: KernelShape
    hat_knots: tuple = ()

    @abstractmethod
    def value(self, x) -> np.ndarray:
        """F(x)"""

    @abstractmethod
    def hat(self, u) -> np.ndarray:
        """F_hat(u), exactly zero for |u| >= 1"""

    @abstractmethod
    def cdf(self, z) -> np.ndarray:
        """∫_{-∞}^{z} F"""

    @abstractmethod
    def envelope(self, x) -> np.ndarray:
        """A decreasing majorant of F(|x|)"""

    @abstractmethod
    def tail_mass(self, z) -> np.ndarray:
        """Upper bound for ∫_{|x| > z} F / 2"""

    def window(self, threshold: float) -> float:
        """Smallest W with envelope(x) <= threshold for all |x| >= W"""
        lo, hi = 0.0, 1.0
        while self.envelope(hi) > threshold:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.envelope(mid) > threshold:
                lo = mid
            else:
                hi = mid
        return hi


class FejerKernel(Kernel):
    shape = KernelShape.FEJER
    hat_knots = (0.0,)

    def value(self, x):
        return np.sinc(np.asarray(x, dtype=float)) ** 2

    def hat(self, u):
        return np.maximum(0.0, 1.0 - np.abs(np.asarray(u, dtype=float)))

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        safe = np.where(z == 0.0, 1.0, z)
        si, _ = special.sici(2.0 * np.pi * z)
        boundary = np.where(z == 0.0, 0.0, np.sin(np.pi * z) ** 2 / (np.pi ** 2 * safe))
        return 0.5 + si / np.pi - boundary

    def envelope(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        return np.minimum(1.0, 1.0 / np.maximum(np.pi * x, 1e-300) ** 2)

    def tail_mass(self, z):
        return 1.0 / (np.pi ** 2 * np.abs(np.asarray(z, dtype=float)))


class JacksonKernel(Kernel):
    shape = KernelShape.JACKSON
    hat_knots = (-0.5, 0.0, 0.5)

    def value(self, x):
        return 0.75 * np.sinc(0.5 * np.asarray(x, dtype=float)) ** 4

    def hat(self, u):
        v = np.abs(2.0 * np.asarray(u, dtype=float))
        inner = 2.0 / 3.0 - v ** 2 + 0.5 * v ** 3
        outer = (2.0 - v) ** 3 / 6.0
        spline = np.where(v <= 1.0, inner, np.where(v < 2.0, outer, 0.0))
        return 1.5 * spline

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        w = 0.5 * np.pi * np.abs(z)
        safe = np.where(w == 0.0, 1.0, w)
        s = np.sin(safe) ** 4
        ds = np.sin(2 * safe) - 0.5 * np.sin(4 * safe)
        dds = 2 * np.cos(2 * safe) - 2 * np.cos(4 * safe)
        si2, _ = special.sici(2 * safe)
        si4, _ = special.sici(4 * safe)
        # ∫_0^w sin^4/t^4 dt by three integrations by parts
        partial = -s / (3 * safe ** 3) - ds / (6 * safe ** 2) - dds / (6 * safe) + (4 * si4 - 2 * si2) / 3
        series = w - 2.0 * w ** 3 / 9.0 + w ** 5 / 25.0
        partial = np.where(w < 1e-2, series, partial)
        return 0.5 + np.sign(z) * (1.5 / np.pi) * partial

    def envelope(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        return 0.75 * np.minimum(1.0, (2.0 / np.maximum(np.pi * x, 1e-300)) ** 4)

    def tail_mass(self, z):
        return 4.0 / (np.pi ** 4 * np.abs(np.asarray(z, dtype=float)) ** 3)


@lru_cache(maxsize=2)
def get_kernel(shape: KernelShape = KernelShape.FEJER) -> Kernel:
    shape = KernelShape(shape)
    if shape == KernelShape.FEJER:
        return FejerKernel()
    elif shape == KernelShape.JACKSON:
        return JacksonKernel()
    else:
        raise ValueError(f"Unexpected kernel shape: {shape}")


class ScaledKernel:
    """
    f(x) = F(x / 2π) / 2π, so that f_hat(u) = F_hat(2πu) lives in [-1/2π, 1/2π]
    """

    def __init__(self, base: Kernel):
        self.base = base

    def value(self, x):
        return self.base.value(np.asarray(x, dtype=float) / (2 * np.pi)) / (2 * np.pi)

    def hat(self, u):
        return self.base.hat(2 * np.pi * np.asarray(u, dtype=float))

    def window(self, threshold: float) -> float:
        return 2 * np.pi * self.base.window(threshold * 2 * np.pi)
