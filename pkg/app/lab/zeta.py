# app/lab/zeta.py
"""
ζ(s) for 0.4 <= Re s <= 3 and |Im s| <= 1e8 by Euler-Maclaurin summation.

    ζ(s) = Σ_{n<N} n^{-s} + N^{1-s}/(s-1) + N^{-s}/2 + Σ_{k=1}^{m} T_k(s) + R_m
    T_k  = B_{2k}/(2k)! · s(s+1)...(s+2k-2) · N^{-s-2k+1}
    |R_m| <= |T_{m+1}| · |s+2m+1| / (σ+2m+1)
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
import structlog
from scipy import special

from app.config.config import get_settings
from app.errors import DomainError, ZetaToleranceError

logger = structlog.get_logger(__name__)

EPS = np.finfo(float).eps
MAX_HEIGHT = 1e8
_BLOCK_ELEMENTS = 1 << 21


@dataclass(frozen=True)
class ZetaPoint:
    s: complex
    value: complex
    err_bound: float
    terms: int
    order: int


@lru_cache(maxsize=8)
def _bernoulli_ratios(order: int) -> np.ndarray:
    """B_{2k}/(2k)! for k = 1..order+1"""
    b = special.bernoulli(2 * order + 2)
    ks = np.arange(1, order + 2)
    return b[2 * ks] / special.factorial(2 * ks)


def _check_domain(s: np.ndarray) -> None:
    sigma = s.real
    if np.any((sigma < 0.4) | (sigma > 3.0)):
        raise DomainError("zeta evaluation needs 0.4 <= Re s <= 3")
    if np.any(np.abs(s.imag) > MAX_HEIGHT):
        raise DomainError(f"zeta evaluation needs |Im s| <= {MAX_HEIGHT:g}")
    if np.any(s == 1.0):
        raise DomainError("zeta has a pole at s = 1")


def _dirichlet_head(s: np.ndarray, n_terms: int) -> tuple[np.ndarray, np.ndarray]:
    """Σ_{n<N} n^{-s} and Σ_{n<N} n^{-σ}, blockwise over n"""
    total = np.zeros(s.shape, dtype=complex)
    absolute = np.zeros(s.shape, dtype=float)
    step = max(_BLOCK_ELEMENTS // max(s.size, 1), 1)
    for start in range(1, n_terms, step):
        logn = np.log(np.arange(start, min(start + step, n_terms), dtype=float))
        total += np.exp(-np.outer(logn, s)).sum(axis=0)
        absolute += np.exp(-np.outer(logn, s.real)).sum(axis=0)
    return total, absolute


def _euler_maclaurin(s: np.ndarray, n_terms: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    head, absolute = _dirichlet_head(s, n_terms)
    N = float(n_terms)
    n_pow = np.exp(-s * math.log(N))  # N^{-s}
    value = head + N * n_pow / (s - 1.0) + 0.5 * n_pow

    ratios = _bernoulli_ratios(order)
    poch = s.copy()
    scale = n_pow / N  # N^{-s-1}
    for k in range(1, order + 1):
        value += ratios[k - 1] * poch * scale
        poch = poch * (s + 2 * k - 1) * (s + 2 * k)
        scale = scale / (N * N)
    tail = np.abs(ratios[order] * poch * scale) * np.abs(s + 2 * order + 1) / (s.real + 2 * order + 1)
    rounding = 16.0 * EPS * (absolute + 1.0)
    return value, tail + rounding


def initial_terms(height: float, factor: Optional[float] = None) -> int:
    factor = factor if factor is not None else get_settings().zeta_terms_per_height
    return max(20, int(math.ceil(factor * abs(height))))


def zeta_many(s, order: Optional[int] = None, batch: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """
    ζ at many points with their error bounds

    Points are processed in batches sorted by height; each batch uses the
    term count required by its tallest member.
    """
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    _check_domain(s)
    order = order or get_settings().zeta_order
    values = np.empty(s.shape, dtype=complex)
    bounds = np.empty(s.shape, dtype=float)
    flat = s.ravel()
    perm = np.argsort(np.abs(flat.imag), kind="stable")
    out_v = values.reshape(-1)
    out_b = bounds.reshape(-1)
    for start in range(0, flat.size, batch):
        idx = perm[start: start + batch]
        pts = flat[idx]
        n_terms = initial_terms(np.max(np.abs(pts.imag)))
        v, b = _euler_maclaurin(pts, n_terms, order)
        out_v[idx] = v
        out_b[idx] = b
    return values, bounds


def zeta_eval(s: complex, target_abs_err: float = 1e-10, order: Optional[int] = None) -> ZetaPoint:
    """
    Evaluate ζ(s) to a requested absolute error

    Args:
        s: Point with 0.4 <= Re s <= 3, |Im s| <= 1e8
        target_abs_err: Requested bound, at least 1e-10
        order: Number of Bernoulli correction terms (default 12)

    Returns:
        ZetaPoint with err_bound <= target_abs_err

    Raises:
        ZetaToleranceError: When doubling N up to the configured cap cannot reach the target
    """
    if target_abs_err < 1e-10:
        raise DomainError("target_abs_err must be >= 1e-10")
    settings = get_settings()
    order = order or settings.zeta_order
    point = np.array([complex(s)])
    _check_domain(point)

    n_terms = initial_terms(point[0].imag)
    while True:
        value, bound = _euler_maclaurin(point, n_terms, order)
        if bound[0] <= target_abs_err:
            return ZetaPoint(s=complex(s), value=complex(value[0]), err_bound=float(bound[0]), terms=n_terms, order=order)
        if 2 * n_terms > settings.zeta_max_terms:
            logger.error("zeta_tolerance_unreachable", s=str(s), bound=float(bound[0]))
            raise ZetaToleranceError(f"cannot reach {target_abs_err:.1e} at s = {s}", achievable=float(bound[0]))
        n_terms *= 2


def log_abs_chi(s) -> np.ndarray:
    """
    log|χ(s)| with χ(s) = 2^s π^{s-1} sin(πs/2) Γ(1-s), stable at large heights
    """
    s = np.asarray(s, dtype=complex)
    z = np.pi * s / 2.0
    y = np.abs(z.imag)
    z_up = z.real + 1j * y
    log_abs_sin = y + np.log(np.abs(1.0 - np.exp(2j * z_up))) - math.log(2.0)
    return (s.real * math.log(2.0) + (s.real - 1.0) * math.log(math.pi) + log_abs_sin
            + special.loggamma(1.0 - s).real)


def _log_abs_on_line(t: float, h: np.ndarray) -> np.ndarray:
    values, _ = zeta_many(0.5 + 1j * (t + np.asarray(h, dtype=float)))
    return np.log(np.abs(values))


def max_log_abs_zeta(t: float, half_width: float, coarse_step: float, refine_depth: int = 20) -> tuple[float, float]:
    """
    Maximum of log|ζ(1/2 + it + ih)| over |h| <= half_width

    Args:
        t: Height (> e)
        half_width: In [0, 2]; 0 gives the single point h = 0
        coarse_step: Scan spacing, at most 2π/log t
        refine_depth: Trisection rounds around the best scan point

    Returns:
        (h*, log|ζ(1/2 + it + ih*)|)
    """
    if not 0.0 <= half_width <= 2.0:
        raise DomainError("half_width must lie in [0, 2]")
    if t <= math.e:
        raise DomainError("max_log_abs_zeta needs t > e")
    if coarse_step <= 0.0 or coarse_step > 2.0 * math.pi / math.log(t):
        raise DomainError(f"coarse_step must lie in (0, 2π/log t = {2 * math.pi / math.log(t):.4g}]")
    if half_width == 0.0:
        return 0.0, float(_log_abs_on_line(t, np.array([0.0]))[0])

    n = max(int(math.ceil(2.0 * half_width / coarse_step)), 1)
    grid = np.linspace(-half_width, half_width, n + 1)
    vals = _log_abs_on_line(t, grid)
    i = int(np.argmax(vals))
    best_h, best_m = float(grid[i]), float(vals[i])

    a = max(-half_width, best_h - coarse_step)
    b = min(half_width, best_h + coarse_step)
    for _ in range(refine_depth):
        m1, m2 = a + (b - a) / 3.0, b - (b - a) / 3.0
        f1, f2 = _log_abs_on_line(t, np.array([m1, m2]))
        for h, f in ((m1, f1), (m2, f2)):
            if f > best_m:
                best_h, best_m = float(h), float(f)
        if f1 < f2:
            a = m1
        else:
            b = m2
    logger.debug("zeta_max", t=t, h_star=best_h, m=best_m)
    return best_h, best_m
