# app/lab/dirichlet.py
"""
Arithmetic partial sums along vertical lines and Dirichlet polynomial tools.

The block-k increment at height τ is

    X_k(τ) = Σ_{p in block k} p^{-1/2} cos(τ log p) + (1/2) p^{-1} cos(2τ log p)

i.e. Re(p^{-(1/2+iτ)} + p^{-2(1/2+iτ)}/2) summed over the block.
"""

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Tuple, Union

import numpy as np
import structlog

from app.errors import DomainError, PreconditionError, QuadratureError
from app.lab.kernels import Kernel, KernelShape, ScaledKernel, get_kernel
from app.lab.primes import K_MIN, PrimePartition, block_primes, sieve_primes
from app.lab.quadrature import integrate, panel_rule, uniform_edges
from app.lab.schemas import Convention
from app.lab.zeta import zeta_many

logger = structlog.get_logger(__name__)

_BLOCK_ELEMENTS = 1 << 21
EULER_WINDOW_THRESHOLD = 1e-12


@dataclass(frozen=True)
class DirichletPoly:
    """D(s) = Σ a(n) n^{-s} with strictly increasing indices"""
    indices: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        coef = np.asarray(self.coefficients, dtype=complex)
        if idx.ndim != 1 or idx.shape != coef.shape:
            raise DomainError("indices and coefficients must be 1-d arrays of equal length")
        if idx.size == 0 or idx[0] < 1:
            raise DomainError("a Dirichlet polynomial needs indices n >= 1")
        if np.any(np.diff(idx) <= 0):
            raise DomainError("indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "coefficients", coef)

    @classmethod
    def from_terms(cls, terms: Iterable[Tuple[int, complex]]) -> "DirichletPoly":
        merged: dict[int, complex] = {}
        for n, a in terms:
            if int(n) in merged:
                raise DomainError(f"duplicate index n = {n}")
            merged[int(n)] = complex(a)
        ns = sorted(merged)
        return cls(np.array(ns, dtype=np.int64), np.array([merged[n] for n in ns], dtype=complex))

    @property
    def length(self) -> int:
        nonzero = np.flatnonzero(self.coefficients != 0)
        return int(self.indices[nonzero[-1]]) if nonzero.size else 1

    def __call__(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        logn = np.log(self.indices.astype(float))
        out = np.zeros(s.shape, dtype=complex)
        step = max(_BLOCK_ELEMENTS // max(s.size, 1), 1)
        for start in range(0, logn.size, step):
            sl = slice(start, start + step)
            out += np.exp(-np.multiply.outer(s, logn[sl])) @ self.coefficients[sl]
        return out


@dataclass(frozen=True)
class WalkSample:
    """S_k(h) at height t for k = ks[0] .. ks[-1]"""
    t: float
    h: float
    ks: np.ndarray
    values: np.ndarray
    convention: Convention


def prime_increments(primes: np.ndarray, taus) -> np.ndarray:
    """Σ over `primes` of p^{-1/2} cos(τ log p) + p^{-1} cos(2τ log p)/2, per τ"""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    out = np.zeros(taus.shape, dtype=float)
    if primes.size == 0:
        return out
    p = primes.astype(float)
    logp = np.log(p)
    step = max(_BLOCK_ELEMENTS // max(taus.size, 1), 1)
    for start in range(0, p.size, step):
        sl = slice(start, start + step)
        phase = np.multiply.outer(taus, logp[sl])
        out += np.cos(phase) @ (p[sl] ** -0.5) + 0.5 * (np.cos(2.0 * phase) @ (1.0 / p[sl]))
    return out


def block_increments(partition: PrimePartition, k: int, taus) -> np.ndarray:
    return prime_increments(block_primes(partition, k), taus)


def partial_sums(t: float, h: float, k_lo: int, k_hi: int, partition: PrimePartition,
                 convention: Convention = Convention.THM1) -> WalkSample:
    """
    S_k(h) at height t for k_lo <= k <= k_hi

    thm1 sums blocks k_lo < j <= k (primes with log log p > k_lo), so the
    first value is 0; thm3 (and full) sums every block j <= k from p = 2.

    Raises:
        OutOfRangeError: If a needed block is not fully sieved
    """
    if abs(h) > 1.0:
        raise DomainError(f"|h| must be <= 1, got {h}")
    convention = Convention(convention)
    ks = np.arange(k_lo, k_hi + 1, dtype=np.int64)
    if ks.size == 0:
        return WalkSample(t=t, h=h, ks=ks, values=np.zeros(0), convention=convention)

    tau = t + h
    first = k_lo + 1 if convention is Convention.THM1 else K_MIN
    increments = {j: float(block_increments(partition, j, tau)[0]) for j in range(first, k_hi + 1)}
    base = math.fsum(v for j, v in increments.items() if j <= k_lo)
    values = np.empty(ks.size, dtype=float)
    running = base
    values[0] = running
    for i, k in enumerate(ks[1:], start=1):
        running += increments[int(k)]
        values[i] = running
    return WalkSample(t=t, h=h, ks=ks, values=values, convention=convention)


def low_prime_sum(t: float, h: float, n0: int, partition: PrimePartition) -> float:
    """P_{n0}(h): the same prime sum over every prime with log log p <= n0, in one pass"""
    primes = np.concatenate([block_primes(partition, j) for j in sorted(partition.blocks) if j <= n0] or
                            [np.empty(0, dtype=np.int64)])
    return float(prime_increments(primes, t + h)[0])


def _sup_bound_range(length: int) -> int:
    return max(1, int(math.floor(math.log(math.log(max(length, 3))))))


def sup_bound_discretized(poly: DirichletPoly, t: float, k: int) -> float:
    """
    Discretized majorant of max_{|h| <= e^{-k}} |D(1/2 + it + ih)|^2

    Sums |D|^2 on the lattice 1/2 + it + 2πij/(8 log N): fully for
    |j| <= 16 e^{-k} log N and damped by 1/(1 + |j|^100) beyond, up to the
    first |j| where the omitted tail is below 1e-12 of (Σ|a_n| n^{-1/2})^2.
    """
    N = poly.length
    k_max = _sup_bound_range(N)
    if not 1 <= k <= k_max:
        raise DomainError(f"k must lie in [1, {k_max}] for a polynomial of length {N}")
    log_n = math.log(max(N, 2))
    j_inner = int(math.floor(16.0 * math.exp(-k) * log_n))
    # Σ_{|j| > J} j^{-100} <= 2 J^{-99}/99
    j_tail = math.ceil(math.exp((math.log(2.0 / 99.0) + 12.0 * math.log(10.0)) / 99.0))
    j_max = max(j_inner + 1, j_tail)

    js = np.arange(-j_max, j_max + 1)
    s = 0.5 + 1j * (t + 2.0 * np.pi * js / (8.0 * log_n))
    sq = np.abs(poly(s)) ** 2
    weights = np.where(np.abs(js) <= j_inner, 1.0, 1.0 / (1.0 + np.abs(js).astype(float) ** 100))
    return float(np.sum(sq * weights))


def dense_sup(poly: DirichletPoly, t: float, k: int, points: int = 2001) -> float:
    """max of |D(1/2 + it + ih)|^2 on an evenly spaced grid over |h| <= e^{-k}"""
    h = np.linspace(-math.exp(-k), math.exp(-k), points)
    return float(np.max(np.abs(poly(0.5 + 1j * (t + h))) ** 2))


def discretization_ratio(poly: DirichletPoly, t: float, k: int, points: int = 2001) -> float:
    """Measured constant: dense-grid maximum over the discretized bound"""
    return dense_sup(poly, t, k, points) / sup_bound_discretized(poly, t, k)


def mean_value_gap(poly: DirichletPoly, T: float, n_quadrature: Optional[int] = None) -> float:
    """
    |(1/T) ∫_T^{2T} |Σ a(n) n^{iτ}|^2 dτ - Σ |a(n)|^2|

    The off-diagonal terms are integrated in closed form,
    ∫_T^{2T} e^{iτL} dτ = (e^{2iTL} - e^{iTL})/(iL) with L = log(n/m).

    Args:
        poly: Dirichlet polynomial of length N <= T
        T: Lower end of the averaging window, at least 100
        n_quadrature: When given, also integrate on that many Gauss-Legendre
            panels and log the difference

    Raises:
        PreconditionError: If N > T
    """
    if T < 100:
        raise DomainError(f"mean_value_gap needs T >= 100, got {T}")
    N = poly.length
    if N > T:
        raise PreconditionError(f"polynomial length {N} exceeds T = {T}; the O(N/T) estimate does not apply")
    if N > T / 10.0:
        logger.warning("mean_value_long_polynomial", length=N, T=T)

    logn = np.log(poly.indices.astype(float))
    a = poly.coefficients
    off = 0.0 + 0.0j
    rows = max(_BLOCK_ELEMENTS // max(logn.size, 1), 1)
    for start in range(0, logn.size, rows):
        sl = slice(start, start + rows)
        L = logn[sl, None] - logn[None, :]
        pair = a[sl, None] * np.conj(a)[None, :]
        diag = L == 0.0
        safe = np.where(diag, 1.0, L)
        integral = (np.exp(2j * T * safe) - np.exp(1j * T * safe)) / (1j * safe)
        off += np.sum(np.where(diag, 0.0, pair * integral))
    gap = abs((off / T).real)

    if n_quadrature:
        # panels of width ~1/log N resolve every n^{iτ}
        panels = max(int(n_quadrature), int(math.ceil(T * max(logn[-1], 1.0))))
        batch = max(_BLOCK_ELEMENTS // max(logn.size, 1), 1)
        integral = integrate(lambda tau: np.abs(np.exp(1j * np.multiply.outer(tau, logn)) @ a) ** 2,
                             np.linspace(T, 2 * T, panels + 1), n=16, batch=batch)
        numeric = abs(float(integral) / T - float(np.sum(np.abs(a) ** 2)))
        logger.debug("mean_value_quadrature", closed_form=gap, numeric=numeric)
    return float(gap)


@dataclass(frozen=True)
class EulerProductResult:
    value: complex
    abs_err: float
    window: float
    panels: int


def _euler_factor(s: np.ndarray, primes: np.ndarray) -> np.ndarray:
    """Π_{p} (1 - p^{-s}) through a sum of logs"""
    logp = np.log(primes.astype(float))
    total = np.zeros(s.shape, dtype=complex)
    step = max(_BLOCK_ELEMENTS // max(s.size, 1), 1)
    for start in range(0, logp.size, step):
        total += np.log1p(-np.exp(-np.multiply.outer(s, logp[start: start + step]))).sum(axis=-1)
    return np.exp(total)


def smoothed_euler_product(
        t: float,
        h: float,
        X: float,
        kernel: Union[Kernel, KernelShape] = KernelShape.JACKSON,
        zeta_eval: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        tol: float = 1e-6,
) -> EulerProductResult:
    """
    log X · ∫ ζ(s+ix) Π_{p<=X}(1 - p^{-(s+ix)}) f(x log X) dx with s = 1/2 + it + ih

    f(x) = F(x/2π)/2π has f_hat supported in [-1/2π, 1/2π] and f_hat(0) = 1.
    The window is where f exceeds 1e-12; panels have width 1 in x and the
    16- and 32-node rules are compared.

    Args:
        t: Height, at least 100
        h: Offset
        X: Euler product length, at least 3
        kernel: Base kernel F or its shape
        zeta_eval: Vectorized ζ; defaults to the Euler-Maclaurin evaluator
        tol: Largest accepted difference between the two rules

    Returns:
        EulerProductResult with the 32-node value and the rule difference as abs_err

    Raises:
        QuadratureError: If the rules differ by more than tol
    """
    if X < 3:
        raise DomainError(f"X must be >= 3, got {X}")
    if t < 100:
        raise DomainError(f"t must be >= 100, got {t}")
    base = kernel if isinstance(kernel, Kernel) else get_kernel(KernelShape(kernel))
    f = ScaledKernel(base)
    zeta_fn = zeta_eval or (lambda s: zeta_many(s)[0])
    log_x = math.log(X)
    primes = sieve_primes(int(math.floor(X)))

    half = f.window(EULER_WINDOW_THRESHOLD) / log_x
    edges = uniform_edges(-half, half, 1.0)
    estimates = []
    for nodes_per_panel in (16, 32):
        nodes, weights = panel_rule(edges, nodes_per_panel)
        s = 0.5 + 1j * (t + h + nodes)
        integrand = zeta_fn(s) * _euler_factor(s, primes) * f.value(nodes * log_x) * log_x
        estimates.append(complex(np.sum(integrand * weights)))

    diff = abs(estimates[1] - estimates[0])
    if diff > tol:
        logger.error("euler_quadrature_unstable", t=t, h=h, X=X, diff=diff)
        raise QuadratureError(f"Euler-product integral unstable at t = {t}", achieved=diff)
    logger.info("euler_check", t=t, h=h, X=X, value=str(estimates[1]), abs_err=diff)
    return EulerProductResult(value=estimates[1], abs_err=diff, window=half, panels=edges.size - 1)
