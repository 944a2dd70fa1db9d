# app/lab/primes.py
"""
Primes on the log-log scale.

Block k holds the primes with e^{k-1} < log p <= e^k, i.e. k = ceil(log log p).
Block sums of 1/(2p) + 1/(8p^2) (variances) and of their cosine-weighted
versions (covariances) are evaluated exactly over sieved primes or through
Prime Number Theorem integrals in u = log log t, where dt/(t log t) = du.
"""

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import structlog
from pydantic import BaseModel, Field
from scipy import integrate, special

from app.config.config import Settings, get_settings
from app.errors import DomainError, EmptyRangeError, OutOfRangeError
from app.lab.schemas import SumMode

logger = structlog.get_logger(__name__)

K_MIN = 0


def block_edges(k: int) -> tuple[float, float]:
    """(exp(e^{k-1}), exp(e^k)); the upper edge is inf once it overflows"""
    lo = math.exp(math.exp(k - 1)) if math.exp(k - 1) < 709 else math.inf
    hi = math.exp(math.exp(k)) if math.exp(k) < 709 else math.inf
    return lo, hi


def block_index(primes: np.ndarray) -> np.ndarray:
    return np.ceil(np.log(np.log(np.asarray(primes, dtype=float)))).astype(np.int64)


def _simple_sieve(limit: int) -> np.ndarray:
    if limit < 2:
        return np.array([], dtype=np.int64)
    is_prime = np.ones(limit + 1, dtype=bool)
    is_prime[:2] = False
    for p in range(2, math.isqrt(limit) + 1):
        if is_prime[p]:
            is_prime[p * p: limit + 1: p] = False
    return np.flatnonzero(is_prime).astype(np.int64)


def sieve_primes(limit: int, segment_odd_count: Optional[int] = None) -> np.ndarray:
    """
    All primes <= limit, ascending, by an odd-only segmented sieve

    Args:
        limit: Inclusive upper bound, at least 2
        segment_odd_count: Odd numbers per segment (defaults to settings)

    Returns:
        int64 array of primes

    Raises:
        EmptyRangeError: If limit < 2
    """
    if limit < 2:
        raise EmptyRangeError(f"no primes below {limit}")
    segment_odd_count = segment_odd_count or get_settings().sieve_segment_size
    base_list = _simple_sieve(math.isqrt(limit) + 1)[1:].tolist()  # odd base primes
    pieces: List[np.ndarray] = [np.array([2], dtype=np.int64)]

    span = 2 * segment_odd_count
    low = 3
    while low <= limit:
        high = min(low + span, limit + 1)  # exclusive
        odd_count = (high - low + 1) // 2
        mask = np.ones(odd_count, dtype=bool)
        for p in base_list:
            p2 = p * p
            if p2 >= high:
                break
            start = max(p2, ((low + p - 1) // p) * p)
            if (start & 1) == 0:
                start += p
            if start >= high:
                continue
            mask[(start - low) // 2::p] = False
        idx = np.flatnonzero(mask)
        if idx.size:
            pieces.append(low + 2 * idx.astype(np.int64))
        low = high

    primes = np.concatenate(pieces)
    logger.info("sieve_complete", limit=limit, primes=int(primes.size))
    return primes


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.int64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PrimePartition:
    """
    Primes grouped into log-log blocks

    `blocks` holds every block that meets [2, sieve_limit]; the last one may be
    partial. Blocks whose lower edge exceeds sieve_limit are analytic only.
    """
    sieve_limit: int
    blocks: Mapping[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_primes(cls, primes: np.ndarray, sieve_limit: int) -> "PrimePartition":
        primes = np.asarray(primes, dtype=np.int64)
        ks = block_index(primes)
        blocks: Dict[int, np.ndarray] = {}
        if primes.size:
            cuts = np.flatnonzero(np.diff(ks)) + 1
            for chunk_k, chunk in zip(np.split(ks, cuts), np.split(primes, cuts)):
                blocks[int(chunk_k[0])] = _readonly(chunk)
        return cls(sieve_limit=int(sieve_limit), blocks=MappingProxyType(blocks))

    @classmethod
    def from_blocks(cls, blocks: Mapping[int, Iterable[int]], sieve_limit: int) -> "PrimePartition":
        """Build a (possibly artificial) partition and check block membership"""
        checked: Dict[int, np.ndarray] = {}
        for k, members in blocks.items():
            arr = np.asarray(sorted(set(int(p) for p in members)), dtype=np.int64)
            if arr.size and np.any(block_index(arr) != k):
                raise ValueError(f"block {k} contains primes outside e^{k - 1} < log p <= e^{k}")
            checked[int(k)] = _readonly(arr)
        return cls(sieve_limit=int(sieve_limit), blocks=MappingProxyType(checked))

    @classmethod
    def build(cls, limit: int) -> "PrimePartition":
        return cls.from_primes(sieve_primes(limit), limit)

    def is_complete(self, k: int) -> bool:
        return block_edges(k)[1] <= self.sieve_limit

    def members(self, k: int) -> np.ndarray:
        """Sieved members of block k (possibly partial, possibly empty)"""
        return self.blocks.get(k, np.empty(0, dtype=np.int64))

    def largest_complete_block(self) -> int:
        k = K_MIN - 1
        while self.is_complete(k + 1):
            k += 1
        return k

    def explicit_primes(self) -> np.ndarray:
        if not self.blocks:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([self.blocks[k] for k in sorted(self.blocks)])

    def primes_up_to(self, x: float) -> np.ndarray:
        if x > self.sieve_limit:
            raise OutOfRangeError(f"primes up to {x} need sieve_limit >= {math.ceil(x)}", needed_limit=math.ceil(x))
        allp = self.explicit_primes()
        return allp[allp <= x]


class BlockMoments(BaseModel):
    """Variance of one block increment"""
    k: int
    s_k2: float = Field(ge=0.0)
    mode: SumMode
    squares_tail_bound: float = 0.0
    empty: bool = False


def block_primes(partition: PrimePartition, k: int) -> np.ndarray:
    """
    All primes with e^{k-1} < log p <= e^k

    Raises:
        OutOfRangeError: If block k is not fully sieved
    """
    if not partition.is_complete(k):
        needed = block_edges(k)[1]
        raise OutOfRangeError(
            f"block {k} needs sieve_limit >= {needed:.6g}, have {partition.sieve_limit}",
            needed_limit=needed,
        )
    return partition.members(k)


def _resolve_mode(partition: PrimePartition, k: int, mode: SumMode) -> SumMode:
    mode = SumMode(mode)
    if mode is SumMode.AUTO:
        return SumMode.EXACT if partition.is_complete(k) else SumMode.PNT
    return mode


def pnt_tolerance(k: int, settings: Optional[Settings] = None) -> float:
    settings = settings or get_settings()
    return settings.pnt_tolerance_base * math.exp(-settings.pnt_tolerance_rate * math.sqrt(max(k, 0)))


def _squares_split(partition: PrimePartition, k: int) -> tuple[np.ndarray, float]:
    """Sieved block members and the u-coordinate where the unsieved tail begins"""
    lo, hi = block_edges(k)
    members = partition.members(k)
    if hi <= partition.sieve_limit:
        return members, float(k)
    if lo >= partition.sieve_limit:
        return members, float(k - 1)
    return members, math.log(math.log(partition.sieve_limit))


def _quad(fn, a: float, b: float, tol: float) -> float:
    if b <= a:
        return 0.0
    value, _ = integrate.quad(fn, a, b, epsabs=tol, epsrel=0.0, limit=200)
    return value


def block_moments(partition: PrimePartition, k: int, mode: SumMode = SumMode.EXACT) -> BlockMoments:
    resolved = _resolve_mode(partition, k, mode)
    settings = get_settings()

    if resolved is SumMode.EXACT:
        primes = block_primes(partition, k).astype(float)
        if primes.size == 0:
            logger.warning("empty_block", k=k)
            return BlockMoments(k=k, s_k2=0.0, mode=resolved, empty=True)
        value = float(np.sum(1.0 / (2.0 * primes) + 1.0 / (8.0 * primes * primes)))
        return BlockMoments(k=k, s_k2=value, mode=resolved)

    if k < 1:
        raise DomainError(f"pnt mode needs k >= 1, got {k}")
    members, u_tail = _squares_split(partition, k)
    p = members.astype(float)
    squares = float(np.sum(1.0 / (8.0 * p * p)))
    # 1/(8 t^2 log t) dt = exp(-e^u)/8 du
    tail = _quad(lambda u: math.exp(-math.exp(u)) / 8.0, u_tail, float(k), settings.pnt_abs_tol)
    return BlockMoments(k=k, s_k2=0.5 + squares + tail, mode=resolved, squares_tail_bound=tail)


def sk2(partition: PrimePartition, k: int, mode: SumMode = SumMode.EXACT) -> float:
    """Variance of the block-k increment, Σ 1/(2p) + 1/(8p^2)"""
    return block_moments(partition, k, mode).s_k2


def _pnt_cosine_integral(delta: float, k: int, settings: Settings) -> float:
    """(1/2) ∫_{k-1}^{k} cos(delta e^u) du, split at the zeros of the cosine"""
    if delta == 0.0:
        return 0.5
    a, b = float(k - 1), float(k)
    m_lo = math.ceil(delta * math.exp(a) / math.pi - 0.5)
    m_hi = math.floor(delta * math.exp(b) / math.pi - 0.5)
    n_zeros = max(m_hi - m_lo + 1, 0)
    if n_zeros + 1 > settings.pnt_max_panels:
        si_hi, ci_hi = special.sici(delta * math.exp(b))
        si_lo, ci_lo = special.sici(delta * math.exp(a))
        return 0.5 * float(ci_hi - ci_lo)
    cuts = [a] + [math.log((0.5 + m) * math.pi / delta) for m in range(m_lo, m_hi + 1)] + [b]
    tol = settings.pnt_abs_tol / (len(cuts) - 1)
    total = math.fsum(
        _quad(lambda u: math.cos(delta * math.exp(u)), lo, hi, tol) for lo, hi in zip(cuts[:-1], cuts[1:])
    )
    return 0.5 * total


def rho_k(partition: PrimePartition, k: int, delta_h: float, mode: SumMode = SumMode.EXACT) -> float:
    """
    Covariance of the block-k increments at two offsets delta_h apart

    Σ cos(delta_h log p)/(2p) + cos(2 delta_h log p)/(8p^2) over the block
    """
    delta = abs(float(delta_h))
    resolved = _resolve_mode(partition, k, mode)
    settings = get_settings()

    if resolved is SumMode.EXACT:
        p = block_primes(partition, k).astype(float)
        if p.size == 0:
            return 0.0
        logp = np.log(p)
        return float(np.sum(np.cos(delta * logp) / (2.0 * p) + np.cos(2.0 * delta * logp) / (8.0 * p * p)))

    if k < 1:
        raise DomainError(f"pnt mode needs k >= 1, got {k}")
    members, u_tail = _squares_split(partition, k)
    p = members.astype(float)
    squares = float(np.sum(np.cos(2.0 * delta * np.log(p)) / (8.0 * p * p))) if p.size else 0.0
    tail = _quad(
        lambda u: math.cos(2.0 * delta * math.exp(u)) * math.exp(-math.exp(u)) / 8.0,
        u_tail, float(k), settings.pnt_abs_tol,
    )
    return _pnt_cosine_integral(delta, k, settings) + squares + tail


def epsilon_j(partition: PrimePartition, j: int, delta_h: float) -> float:
    """s_j^2 - rho_j below the branching scale log(1/delta_h), rho_j above it"""
    if delta_h <= 0:
        raise DomainError("epsilon_j needs delta_h > 0")
    rho = rho_k(partition, j, delta_h, SumMode.AUTO)
    if j <= math.log(1.0 / delta_h):
        return sk2(partition, j, SumMode.AUTO) - rho
    return rho


def variance_ladder(partition: PrimePartition, levels: Sequence[int]) -> np.ndarray:
    return np.array([sk2(partition, j, SumMode.AUTO) for j in levels], dtype=float)


def covariance_ladder(partition: PrimePartition, levels: Sequence[int], delta_h: float) -> np.ndarray:
    return np.array([rho_k(partition, j, delta_h, SumMode.AUTO) for j in levels], dtype=float)


def measure_pnt_decay(partition: PrimePartition) -> dict:
    """
    Distance of exact block variances from 1/2 and a fitted rate c in e^{-c sqrt(k)}

    The fit uses the complete blocks k >= 1; with fewer than two of them the
    rate is None.
    """
    ks = [k for k in range(1, partition.largest_complete_block() + 1)]
    gaps = {k: abs(sk2(partition, k, SumMode.EXACT) - 0.5) for k in ks}
    rate = None
    usable = [k for k in ks if gaps[k] > 0]
    if len(usable) >= 2:
        slope, _ = np.polyfit(np.sqrt(usable), np.log([gaps[k] for k in usable]), 1)
        rate = float(-slope)
    return {"gaps": gaps, "rate": rate}
