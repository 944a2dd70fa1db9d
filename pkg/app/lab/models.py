# app/lab/models.py
"""
Surrogate randomness for the prime walk.

Steinhaus: p^{-iτ} is replaced by independent uniform phases e^{iθ_p}.
Gaussian: per block a centered pair with variance s_k^2 and covariance rho_k.
Hierarchical field: the level-j increment is shared by every grid point of a
cell floor(h e^j), so two points are correlated through the levels where
their cells coincide.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import BaseModel
from scipy import linalg, stats

from app.config.config import get_settings
from app.errors import ConfigError, CovarianceError, DomainError, ResourceLimitError
from app.lab.parallel import map_chunks
from app.lab.primes import (
    K_MIN,
    PrimePartition,
    block_index,
    block_primes,
    covariance_ladder,
    rho_k,
    sk2,
    variance_ladder,
)
from app.lab.quadrature import panel_rule, uniform_edges
from app.lab.rng import Stream, chunk_bounds, keyed_generator, uniform_angles
from app.lab.schemas import EstimateCI, SumMode

logger = structlog.get_logger(__name__)

Interval = Tuple[float, float]
REAL_LINE: Interval = (-math.inf, math.inf)
EXACT_GRID_MAX = 512
_Z_CUT = 12.0
_BLOCK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class LevelMoments:
    """Per-level variances s_j^2 and, for a fixed offset, covariances rho_j"""
    levels: np.ndarray
    s2: np.ndarray
    rho: Optional[np.ndarray] = None
    delta_h: Optional[float] = None

    @classmethod
    def from_partition(cls, partition: PrimePartition, levels: Iterable[int],
                       delta_h: Optional[float] = None) -> "LevelMoments":
        levels = np.asarray(list(levels), dtype=np.int64)
        s2 = variance_ladder(partition, levels)
        rho = covariance_ladder(partition, levels, delta_h) if delta_h is not None else None
        return cls(levels=levels, s2=s2, rho=rho, delta_h=delta_h)

    def _pick(self, values: np.ndarray, levels: Sequence[int]) -> np.ndarray:
        lookup = {int(j): i for i, j in enumerate(self.levels)}
        missing = [int(j) for j in levels if int(j) not in lookup]
        if missing:
            raise ConfigError(f"moments do not cover levels {missing}")
        return np.array([values[lookup[int(j)]] for j in levels], dtype=float)

    def variances_for(self, levels: Sequence[int]) -> np.ndarray:
        return self._pick(self.s2, levels)

    def covariances_for(self, levels: Sequence[int]) -> np.ndarray:
        if self.rho is None:
            raise ConfigError("these moments carry no covariances")
        return self._pick(self.rho, levels)


# Steinhaus model

@dataclass(frozen=True)
class SteinhausSample:
    primes: np.ndarray
    theta: np.ndarray
    h_set: np.ndarray
    ks: np.ndarray
    trajectories: np.ndarray  # (len(h_set), len(ks))

    def increments(self) -> np.ndarray:
        return np.diff(self.trajectories, axis=1, prepend=0.0)

    def recompute_increment(self, k: int) -> np.ndarray:
        """Y_k(h) for every h, from the stored phases of block k"""
        mask = block_index(self.primes) == k
        return _phase_sums(self.theta[mask][None, :], self.primes[mask], self.h_set)[0]


def _phase_sums(theta: np.ndarray, primes: np.ndarray, h: np.ndarray) -> np.ndarray:
    """
    Σ_p p^{-1/2} cos(θ_p - h log p) + p^{-1} cos(2θ_p - 2h log p)/2

    Args:
        theta: (M, P) phases
        primes: (P,) primes
        h: (H,) offsets

    Returns:
        (M, H) sums
    """
    m = theta.shape[0]
    out = np.zeros((m, h.size), dtype=float)
    if primes.size == 0:
        return out
    p = primes.astype(float)
    phi = np.multiply.outer(np.log(p), h)  # (P, H)
    root = (p ** -0.5)[:, None]
    half = (0.5 / p)[:, None]
    step = max(_BLOCK_ELEMENTS // max(m, 1), 1)
    for start in range(0, p.size, step):
        sl = slice(start, start + step)
        c, s = np.cos(theta[:, sl]), np.sin(theta[:, sl])
        c2, s2 = 2.0 * c * c - 1.0, 2.0 * s * c
        out += c @ (root[sl] * np.cos(phi[sl])) + s @ (root[sl] * np.sin(phi[sl]))
        out += c2 @ (half[sl] * np.cos(2.0 * phi[sl])) + s2 @ (half[sl] * np.sin(2.0 * phi[sl]))
    return out


def sample_steinhaus(rng_seed: int, partition: PrimePartition, h_set: Sequence[float], k_max: int) -> SteinhausSample:
    """
    One draw of the Steinhaus walk S_k(h) for K_MIN <= k <= k_max

    Raises:
        OutOfRangeError: If a block up to k_max is not fully sieved
    """
    h = np.atleast_1d(np.asarray(h_set, dtype=float))
    ks = np.arange(K_MIN, k_max + 1, dtype=np.int64)
    primes, thetas = [], []
    increments = np.zeros((h.size, ks.size), dtype=float)
    for i, k in enumerate(ks):
        members = block_primes(partition, int(k))
        theta = uniform_angles(keyed_generator(rng_seed, Stream.STEINHAUS, int(k)), members.size)
        increments[:, i] = _phase_sums(theta[None, :], members, h)[0]
        primes.append(members)
        thetas.append(theta)
    return SteinhausSample(
        primes=np.concatenate(primes) if primes else np.empty(0, dtype=np.int64),
        theta=np.concatenate(thetas) if thetas else np.empty(0),
        h_set=h,
        ks=ks,
        trajectories=np.cumsum(increments, axis=1),
    )


def _tail_covariance(primes: np.ndarray, h: np.ndarray) -> np.ndarray:
    p = primes.astype(float)
    logp = np.log(p)
    delta = np.subtract.outer(h, h)
    cov = np.zeros(delta.shape, dtype=float)
    for start in range(0, p.size, _BLOCK_ELEMENTS):
        sl = slice(start, start + _BLOCK_ELEMENTS)
        for idx in np.ndindex(delta.shape):
            d = delta[idx]
            cov[idx] += np.sum(np.cos(d * logp[sl]) / (2.0 * p[sl]) + np.cos(2.0 * d * logp[sl]) / (8.0 * p[sl] ** 2))
    return cov


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(cov)
    if w.size and w.min() < -1e-8 * max(w.max(), 1e-300):
        logger.warning("covariance_clipped", min_eigenvalue=float(w.min()))
    return v * np.sqrt(np.clip(w, 0.0, None))


def gaussian_share(partition: PrimePartition, k: int) -> float:
    """Fraction of the block-k variance that steinhaus_increments draws as a Gaussian instead of from phases"""
    primes = block_primes(partition, k).astype(float)
    if primes.size == 0:
        return 0.0
    weights = 1.0 / (2.0 * primes) + 1.0 / (8.0 * primes ** 2)
    return float(weights[get_settings().steinhaus_exact_primes:].sum() / weights.sum())


def steinhaus_increments(rng_seed: int, partition: PrimePartition, k: int, h_values: Sequence[float],
                         replicas: int, threads: int = 1) -> np.ndarray:
    """
    Independent draws of the block-k Steinhaus increment at several offsets

    The first `steinhaus_exact_primes` primes of the block get explicit
    phases; the remaining primes enter as one Gaussian vector with their exact
    covariance.

    Returns:
        (replicas, len(h_values)) array
    """
    settings = get_settings()
    h = np.atleast_1d(np.asarray(h_values, dtype=float))
    primes = block_primes(partition, k)
    head, tail = primes[: settings.steinhaus_exact_primes], primes[settings.steinhaus_exact_primes:]
    tail_factor = _psd_factor(_tail_covariance(tail, h)) if tail.size else None
    if tail.size:
        logger.debug("steinhaus_gaussian_tail", k=k, head=int(head.size), tail=int(tail.size))

    def work(idx: int, start: int, size: int) -> np.ndarray:
        rng = keyed_generator(rng_seed, Stream.STEINHAUS, k, idx)
        out = _phase_sums(uniform_angles(rng, (size, head.size)), head, h)
        if tail_factor is not None:
            out += rng.standard_normal((size, h.size)) @ tail_factor.T
        return out

    parts = map_chunks(work, chunk_bounds(replicas, settings.replica_chunk), threads)
    return np.vstack(parts) if parts else np.empty((0, h.size))


class ExponentialMoment(BaseModel):
    j: int
    k: int
    lam: float
    estimate: EstimateCI
    constant: float


def exponential_moment_constant(rng_seed: int, partition: PrimePartition, j: int, k: int, lam: float = 1.0,
                                replicas: int = 100_000, threads: int = 1) -> ExponentialMoment:
    """
    E[exp(lam (S_k - S_j))] for the Steinhaus walk and the measured C in
    E <= exp(lam^2 (k - j + C)/4)
    """
    if k <= j:
        raise DomainError(f"need j < k, got j={j}, k={k}")
    total = np.zeros(replicas, dtype=float)
    for i in range(j + 1, k + 1):
        total += steinhaus_increments(rng_seed, partition, i, [0.0], replicas, threads)[:, 0]
    estimate = EstimateCI.from_samples(np.exp(lam * total), seed=rng_seed, stream=Stream.STEINHAUS.name)
    constant = 4.0 * math.log(estimate.value) / lam ** 2 - (k - j)
    return ExponentialMoment(j=j, k=k, lam=lam, estimate=estimate, constant=constant)


# Gaussian pair

@dataclass(frozen=True)
class GaussianWalkPair:
    delta_h: float
    ks: np.ndarray
    increments: np.ndarray  # (replicas, K, 2)
    paths: np.ndarray


def pair_factor(s2, rho) -> tuple[np.ndarray, np.ndarray]:
    """(a, b) with [[a, b], [b, a]]^2 = [[s2, rho], [rho, s2]]"""
    s2 = np.asarray(s2, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(np.abs(rho) > s2 * (1.0 + 1e-12)):
        bad = int(np.flatnonzero(np.abs(rho) > s2 * (1.0 + 1e-12))[0])
        raise CovarianceError(f"|rho| = {abs(float(rho.flat[bad])):.6g} exceeds s^2 = {float(s2.flat[bad]):.6g}")
    rho = np.clip(rho, -s2, s2)
    up, down = np.sqrt(s2 + rho), np.sqrt(s2 - rho)
    return 0.5 * (up + down), 0.5 * (up - down)


def sample_gaussian_pair(rng_seed: int, delta_h: float, k_range: Iterable[int], moments: LevelMoments,
                         replicas: int = 1) -> GaussianWalkPair:
    """
    Correlated Gaussian walks (G_k, G'_k) with per-level covariance [[s2, rho], [rho, s2]]

    Raises:
        CovarianceError: If |rho_k| > s_k^2 for some k
    """
    ks = np.asarray(list(k_range), dtype=np.int64)
    s2 = moments.variances_for(ks)
    rho = s2 if delta_h == 0 else moments.covariances_for(ks)
    a, b = pair_factor(s2, rho)
    z = keyed_generator(rng_seed, Stream.GAUSSIAN_PAIR, 0).standard_normal((replicas, ks.size, 2))
    first = a * z[..., 0] + b * z[..., 1]
    second = b * z[..., 0] + a * z[..., 1]
    increments = np.stack([first, second], axis=-1)
    return GaussianWalkPair(delta_h=delta_h, ks=ks, increments=increments, paths=np.cumsum(increments, axis=1))


def _box_mass(sd: float, box: Interval) -> float:
    lo, hi = box
    if lo > hi:
        return 0.0
    return float(stats.norm.cdf(hi / sd) - stats.norm.cdf(lo / sd))


def _is_real_line(box: Interval) -> bool:
    return box[0] == -math.inf and box[1] == math.inf


def gaussian_box_probability(s2: float, rho: float, box_a: Interval, box_b: Interval) -> float:
    """
    P(N in A, N' in B) for a centered pair with variances s2 and covariance rho

    Integrates the conditional law N' | N = x against the density of N on
    Gauss-Legendre panels.
    """
    if s2 <= 0:
        raise DomainError("s2 must be positive")
    sd = math.sqrt(s2)
    if _is_real_line(box_b):
        return _box_mass(sd, box_a)
    if _is_real_line(box_a):
        return _box_mass(sd, box_b)
    if box_a[0] > box_a[1] or box_b[0] > box_b[1]:
        return 0.0

    z_lo = min(max(box_a[0] / sd, -_Z_CUT), _Z_CUT)
    z_hi = min(max(box_a[1] / sd, -_Z_CUT), _Z_CUT)
    if z_hi <= z_lo:
        return 0.0
    nodes, weights = panel_rule(uniform_edges(z_lo, z_hi, 0.25), 32)
    mean = (rho / s2) * sd * nodes
    cond_var = max(s2 - rho * rho / s2, 0.0)
    if cond_var == 0.0:
        inner = ((mean >= box_b[0]) & (mean <= box_b[1])).astype(float)
    else:
        cond_sd = math.sqrt(cond_var)
        inner = stats.norm.cdf((box_b[1] - mean) / cond_sd) - stats.norm.cdf((box_b[0] - mean) / cond_sd)
    return float(np.sum(stats.norm.pdf(nodes) * inner * weights))


class DecouplingCheck(BaseModel):
    coupled: float
    decoupled: float
    factor: float
    holds: bool


def gaussian_decoupling_check(s2: float, rho: float, box_a: Interval, box_b: Interval) -> DecouplingCheck:
    """
    P((N, N') in A x B) against sqrt((s2 + |rho|)/(s2 - |rho|)) times the same
    probability for two independent normals of variance s2 + |rho|
    """
    if abs(rho) >= s2:
        raise CovarianceError(f"decoupling needs |rho| < s2, got rho={rho}, s2={s2}")
    coupled = gaussian_box_probability(s2, rho, box_a, box_b)
    sd = math.sqrt(s2 + abs(rho))
    decoupled = _box_mass(sd, box_a) * _box_mass(sd, box_b)
    factor = math.sqrt((s2 + abs(rho)) / (s2 - abs(rho)))
    return DecouplingCheck(coupled=coupled, decoupled=decoupled, factor=factor,
                           holds=coupled <= factor * decoupled + 1e-12)


def _in_box(x: np.ndarray, box: Interval) -> np.ndarray:
    return (x >= box[0]) & (x <= box[1])


def berry_esseen_gap(rng_seed: int, partition: PrimePartition, k: int, box_a: Interval, box_b: Interval,
                     delta_h: float, M: int, threads: int = 1) -> float:
    """
    |P̂((Y_k(0), Y_k(delta_h)) in A x B) - P((N_k, N'_k) in A x B)|

    The first probability is a Steinhaus Monte-Carlo estimate over M draws;
    the second is the Gaussian box probability with the exact block moments.
    """
    if M < 10_000:
        raise DomainError(f"berry_esseen_gap needs M >= 10^4, got {M}")
    y = steinhaus_increments(rng_seed, partition, k, [0.0, delta_h], M, threads)
    p_hat = float(np.mean(_in_box(y[:, 0], box_a) & _in_box(y[:, 1], box_b)))
    s2 = sk2(partition, k, SumMode.EXACT)
    rho = rho_k(partition, k, delta_h, SumMode.EXACT)
    gap = abs(p_hat - gaussian_box_probability(s2, rho, box_a, box_b))
    logger.info("berry_esseen_gap", k=k, delta_h=delta_h, M=M, gap=gap, gaussian_share=gaussian_share(partition, k))
    return gap


# Hierarchical field

@dataclass(frozen=True)
class FieldLayout:
    """Grid offsets on [lo, hi] and the increment levels of a field"""
    grid: np.ndarray
    levels: np.ndarray

    @classmethod
    def uniform(cls, step: float, levels: Iterable[int], lo: float = -0.5, hi: float = 0.5) -> "FieldLayout":
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        limit = get_settings().max_grid_points
        if count > limit:
            raise ResourceLimitError(f"grid of {count} points exceeds max_grid_points = {limit}")
        return cls(grid=lo + step * np.arange(count), levels=np.asarray(list(levels), dtype=np.int64))


@dataclass(frozen=True)
class HierarchicalField:
    grid: np.ndarray
    levels: np.ndarray
    s2: np.ndarray
    values: np.ndarray  # (G, L) level sums

    def marginal_variance(self) -> np.ndarray:
        return np.cumsum(self.s2)

    def shared_levels(self, i: int, i2: int) -> int:
        return sum(int(_cell_of(self.grid[i], j) == _cell_of(self.grid[i2], j)) for j in self.levels)


def _as_layout(config) -> FieldLayout:
    return config if isinstance(config, FieldLayout) else config.layout()


def _cell_of(h, j: int):
    return np.floor(np.asarray(h) * math.exp(j)).astype(np.int64)


def _cells(grid: np.ndarray, j: int) -> tuple[np.ndarray, int]:
    cells = _cell_of(grid, j)
    cells -= cells.min()
    return cells, int(cells.max()) + 1


def _accumulate_levels(rng_seed: int, key: int, size: int, layout: FieldLayout, s2: np.ndarray,
                       keep_paths: bool) -> np.ndarray:
    acc = np.zeros((size, layout.grid.size), dtype=float)
    paths = np.empty((size, layout.grid.size, layout.levels.size), dtype=float) if keep_paths else None
    for i, j in enumerate(layout.levels):
        idx, n_cells = _cells(layout.grid, int(j))
        rng = keyed_generator(rng_seed, Stream.FIELD, key, int(j))
        acc += (rng.standard_normal((size, n_cells)) * math.sqrt(s2[i]))[:, idx]
        if keep_paths:
            paths[:, :, i] = acc
    return paths if keep_paths else acc


def field_chunk(grid_size: int) -> int:
    """Replicas per chunk: bounded by the configured chunk and by memory"""
    return min(get_settings().replica_chunk, max(1, _BLOCK_ELEMENTS // max(grid_size, 1)))


def sample_field_batch(rng_seed: int, config, moments: LevelMoments, chunk_index: int, size: int) -> np.ndarray:
    """(size, G, L) level sums for one replica chunk"""
    layout = _as_layout(config)
    return _accumulate_levels(rng_seed, chunk_index, size, layout, moments.variances_for(layout.levels), True)


def sample_field(rng_seed: int, config, moments: LevelMoments, replica: int = 0) -> HierarchicalField:
    """
    One hierarchical field over the grid of `config`

    Raises:
        ResourceLimitError: If the grid exceeds max_grid_points
    """
    layout = _as_layout(config)
    s2 = moments.variances_for(layout.levels)
    values = _accumulate_levels(rng_seed, replica, 1, layout, s2, True)[0]
    return HierarchicalField(grid=layout.grid, levels=layout.levels, s2=s2, values=values)


def field_maxima(rng_seed: int, config, moments: LevelMoments, replicas: int, threads: int = 1) -> np.ndarray:
    """max over the grid of the final level sum, one value per replica"""
    layout = _as_layout(config)
    s2 = moments.variances_for(layout.levels)

    def work(idx: int, start: int, size: int) -> np.ndarray:
        return _accumulate_levels(rng_seed, idx, size, layout, s2, False).max(axis=1)

    chunks = chunk_bounds(replicas, field_chunk(layout.grid.size))
    logger.info("field_maxima", grid=int(layout.grid.size), levels=int(layout.levels.size), replicas=replicas)
    return np.concatenate(map_chunks(work, chunks, threads))


def exact_field_covariance(config, partition: PrimePartition) -> np.ndarray:
    """Σ_j rho_j(|h - h'|) on a uniform grid, one Toeplitz matrix per level"""
    layout = _as_layout(config)
    if layout.grid.size > EXACT_GRID_MAX:
        raise ResourceLimitError(f"exact sampler is limited to {EXACT_GRID_MAX} grid points")
    distances = layout.grid - layout.grid[0]
    cov = np.zeros((distances.size, distances.size), dtype=float)
    for j in layout.levels:
        column = [rho_k(partition, int(j), float(d), SumMode.AUTO) for d in distances]
        cov += linalg.toeplitz(column)
    return cov


def sample_field_exact(rng_seed: int, config, partition: PrimePartition, replicas: int) -> np.ndarray:
    """(replicas, G) final level sums drawn from the exact covariance"""
    factor = _psd_factor(exact_field_covariance(config, partition))
    z = keyed_generator(rng_seed, Stream.FIELD_EXACT, 0).standard_normal((replicas, factor.shape[1]))
    return z @ factor.T


def field_max_ks_distance(rng_seed: int, config, partition: PrimePartition, replicas: int,
                          threads: int = 1) -> float:
    """Two-sample KS distance between hierarchical and exact-covariance field maxima"""
    layout = _as_layout(config)
    moments = LevelMoments.from_partition(partition, layout.levels)
    hierarchical = field_maxima(rng_seed, layout, moments, replicas, threads)
    exact = sample_field_exact(rng_seed, layout, partition, replicas).max(axis=1)
    return float(stats.ks_2samp(hierarchical, exact).statistic)


def hierarchical_pair_covariance(moments: LevelMoments, separation: float) -> float:
    """Σ s_j^2 over the levels j <= log(1/separation)"""
    cutoff = math.log(1.0 / separation)
    return float(np.sum(moments.s2[moments.levels <= cutoff]))
