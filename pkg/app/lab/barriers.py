# app/lab/barriers.py
"""
Barriers, good points and the statistics built on them.

A grid point h is good when its walk stays in L_k - slack <= S_k(h) <= U_k + slack
for every step k. Counting good points on sampled fields gives the first and
second moments behind the Paley-Zygmund lower bound; maxima of fields give the
right-tail and tightness statistics.
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field
from scipy import special, stats

from app.errors import ConfigError, DomainError
from app.lab.models import FieldLayout, HierarchicalField, LevelMoments, field_chunk, sample_field_batch
from app.lab.parallel import map_chunks
from app.lab.rng import Stream, chunk_bounds, keyed_generator
from app.lab.schemas import Convention, EstimateCI

logger = structlog.get_logger(__name__)

MIN_TAIL_EXCEEDANCES = 10
MIN_TAIL_SAMPLES = 10_000


def slope(n: int) -> float:
    """alpha = 1 - (3/4) log n / n"""
    return 1.0 - 0.75 * math.log(n) / n


class WalkConfig(BaseModel):
    """Scale parameters of one experiment; `flags` records ranges the run lies outside of"""
    T: Optional[float] = None
    n: int = Field(ge=2)
    n0: int = Field(ge=0)
    nL: int
    y: float = Field(ge=0.0)
    alpha: float
    convention: Convention = Convention.get_default()
    grid_step: float = Field(gt=0.0)
    flags: List[str] = Field(default_factory=list)

    @classmethod
    def build(cls, n: int, y: float, convention: Convention = Convention.THM1, T: Optional[float] = None) -> "WalkConfig":
        convention = Convention(convention)
        if n < 2:
            raise ConfigError(f"n must be >= 2, got {n}")
        if y < 0:
            raise ConfigError(f"y must be >= 0, got {y}")
        flags = []
        if convention is Convention.THM1:
            n0 = int(math.floor(y))
            nL = n - n0
            step = math.exp(-(nL - n0))
            if y > n ** 0.1:
                flags.append("y_above_left_tail_range")
            if y < 1:
                flags.append("degenerate_small_y")
        elif convention is Convention.THM3:
            n0 = int(math.floor(y / 100.0))
            nL = int(math.floor(n - math.log(100.0)))
            step = math.exp(-nL)
            if y < 10 or y > n / math.log(n):
                flags.append("y_outside_right_tail_range")
        else:
            n0, nL, step = 0, n, math.exp(-n)
        if nL <= n0:
            raise ConfigError(f"empty level range: n0 = {n0}, nL = {nL} (n = {n}, y = {y})")
        return cls(T=T, n=n, n0=n0, nL=nL, y=y, alpha=slope(n), convention=convention, grid_step=step, flags=flags)

    @classmethod
    def from_height(cls, T: float, y: float, convention: Convention = Convention.THM1) -> "WalkConfig":
        if T <= math.exp(math.e):
            raise ConfigError(f"T must exceed e^e, got {T}")
        return cls.build(int(math.floor(math.log(math.log(T)))), y, convention, T=T)

    @property
    def levels(self) -> range:
        """Field levels: n0..nL (thm1), 0..nL (thm3), 1..n (full)"""
        if self.convention is Convention.THM1:
            return range(self.n0, self.nL + 1)
        if self.convention is Convention.THM3:
            return range(0, self.nL + 1)
        return range(1, self.n + 1)

    @property
    def recentering(self) -> float:
        return self.n - 0.75 * math.log(self.n)

    @property
    def proposition_offset(self) -> float:
        return self.recentering - 100.0 * self.y

    def layout(self) -> FieldLayout:
        return FieldLayout.uniform(self.grid_step, self.levels)

    def check(self) -> None:
        """Raise ConfigError unless the fields agree with the convention's formulas"""
        expected = WalkConfig.build(self.n, self.y, self.convention, self.T)
        for name in ("n0", "nL"):
            if getattr(self, name) != getattr(expected, name):
                raise ConfigError(f"{name} = {getattr(self, name)} but the {self.convention.value} convention gives {getattr(expected, name)}")
        for name in ("alpha", "grid_step"):
            if not math.isclose(getattr(self, name), getattr(expected, name), rel_tol=1e-12):
                raise ConfigError(f"{name} = {getattr(self, name)} but the {self.convention.value} convention gives {getattr(expected, name)}")

    def metadata(self) -> Dict[str, float]:
        return {"recentering": self.recentering, "proposition_offset": self.proposition_offset}


def symmetrize(f: Callable[[float], float], k: int, n0: int, nL: int, n: int) -> float:
    """f(k - n0) on the first half, f(nL - k) on the second, 0 outside (n0, nL)"""
    if k <= n0 or k >= nL:
        return 0.0
    if 2 * k <= n:
        return float(f(k - n0))
    return float(f(nL - k))


@dataclass(frozen=True)
class BarrierSpec:
    ks: np.ndarray
    L: np.ndarray
    U: np.ndarray
    generator: str = "custom"

    def __post_init__(self):
        if not (len(self.ks) == len(self.L) == len(self.U)):
            raise ConfigError("barrier arrays must have one value per step")

    @classmethod
    def custom(cls, ks: Sequence[int], L: Sequence[float], U: Sequence[float]) -> "BarrierSpec":
        return cls(np.asarray(ks, dtype=np.int64), np.asarray(L, dtype=float), np.asarray(U, dtype=float))

    @classmethod
    def vacuous(cls, ks: Sequence[int]) -> "BarrierSpec":
        ks = np.asarray(ks, dtype=np.int64)
        return cls(ks, np.full(ks.size, -np.inf), np.full(ks.size, np.inf))


def barrier_values(config: WalkConfig) -> BarrierSpec:
    """
    Upper and lower barriers of the left-tail (thm1) or right-tail (thm3) argument

    Raises:
        ConfigError: If the config does not follow its convention
    """
    config.check()
    n, n0, nL, y, alpha = config.n, config.n0, config.nL, config.y, config.alpha
    ks = np.arange(n0, nL + 1, dtype=np.int64)

    if config.convention is Convention.THM1:
        sym_log = np.array([symmetrize(math.log, int(k), n0, nL, n) for k in ks])
        sym_pow = np.array([symmetrize(lambda x: x ** 0.75, int(k), n0, nL, n) for k in ks])
        U = y / 10.0 + alpha * (ks - n0) - 10.0 * sym_log
        L = -10.0 * y + alpha * (ks - n0) - sym_pow
        return BarrierSpec(ks, L, U, generator=Convention.THM1.value)

    if config.convention is Convention.THM3:
        m = np.maximum(np.minimum(ks, n - ks), 1).astype(float)
        U = y + alpha * ks - 10.0 * np.log(m)
        L = -10.0 + (alpha + y / nL) * ks - m ** 0.75
        U[-1] = n - 0.75 * math.log(n) + y
        L[-1] = U[-1] - 10.0
        return BarrierSpec(ks, L, U, generator=Convention.THM3.value)

    raise ConfigError("the full convention has no barriers")


def _paths_on_steps(values: np.ndarray, levels: Sequence[int], ks: np.ndarray) -> np.ndarray:
    """
    Level sums (..., G, L) re-indexed to barrier steps; steps before the first
    level read 0
    """
    lookup = {int(j): i for i, j in enumerate(levels)}
    first = min(lookup) if lookup else 0
    shape = values.shape[:-1] + (ks.size,)
    out = np.zeros(shape, dtype=float)
    for i, k in enumerate(ks):
        if int(k) in lookup:
            out[..., i] = values[..., lookup[int(k)]]
        elif int(k) >= first:
            raise ConfigError(f"field levels do not cover barrier step {int(k)}")
    return out


def good_set_counts(paths: np.ndarray, levels: Sequence[int], spec: BarrierSpec,
                    slacks: Sequence[float] = (0.0,)) -> np.ndarray:
    """
    Good-point counts for a batch of fields

    Args:
        paths: (R, G, L) level sums
        levels: Level of each of the L columns
        spec: Barriers
        slacks: Corridor widenings

    Returns:
        (R, len(slacks)) integer counts
    """
    on_steps = _paths_on_steps(paths, levels, spec.ks)
    counts = np.empty((paths.shape[0], len(slacks)), dtype=np.int64)
    for i, slack in enumerate(slacks):
        inside = (on_steps >= spec.L - slack) & (on_steps <= spec.U + slack)
        counts[:, i] = np.all(inside, axis=-1).sum(axis=-1)
    return counts


def good_set_count(field: HierarchicalField, spec: BarrierSpec, slack: float = 0.0) -> int:
    """Number of grid points whose path satisfies L_k - slack <= path_k <= U_k + slack for all k"""
    return int(good_set_counts(field.values[None, ...], field.levels, spec, (slack,))[0, 0])


class MomentReport(BaseModel):
    mean_count: EstimateCI
    second_moment: EstimateCI
    pz_lower: float
    p_nonempty: EstimateCI
    same_set_ratio: float
    jackknife_bias: float
    jackknife_se: float
    per_seed: List[Dict[str, float]]
    flags: List[str] = Field(default_factory=list)
    recentering: float
    proposition_offset: float

    def paley_zygmund_holds(self, z: float = 3.0) -> bool:
        """pz_lower <= P̂(#G >= 1) + z SE"""
        return self.pz_lower <= self.p_nonempty.value + z * self.p_nonempty.se + 1e-12


def _pz_jackknife(plus: np.ndarray, minus: np.ndarray) -> tuple[float, float]:
    n = plus.size
    if n < 2:
        return 0.0, 0.0
    s1, s2 = plus.sum(), (minus ** 2).sum()
    num = ((s1 - plus) / (n - 1)) ** 2
    den = (s2 - minus ** 2) / (n - 1)
    loo = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    full = (s1 / n) ** 2 / (s2 / n) if s2 > 0 else 0.0
    bias = (n - 1) * (loo.mean() - full)
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return float(bias), se


def moment_report(config: WalkConfig, spec: BarrierSpec, n_replicas: int, seeds: Sequence[int],
                  moments: LevelMoments, threads: int = 1) -> MomentReport:
    """
    First and second moments of good-point counts and the Paley-Zygmund bound

    pz_lower = E[#G+]^2 / E[(#G-)^2] with G+- the corridors widened (+1) and
    narrowed (-1); the same-set ratio E[#G]^2/E[#G^2] is reported next to
    P̂(#G >= 1), which it never exceeds.

    Args:
        config: Walk configuration (its layout gives the grid and levels)
        spec: Barriers
        n_replicas: Fields per seed, at least 100
        seeds: One independent run per seed
        moments: Level variances covering config.levels
        threads: Worker threads
    """
    if n_replicas < 100:
        raise DomainError(f"moment_report needs at least 100 replicas, got {n_replicas}")
    if not seeds:
        raise DomainError("moment_report needs at least one seed")
    layout = config.layout()
    chunk = field_chunk(layout.grid.size)

    per_seed, all_counts = [], []
    for seed in seeds:
        def work(idx: int, start: int, size: int, seed: int = seed) -> np.ndarray:
            paths = sample_field_batch(seed, layout, moments, idx, size)
            return good_set_counts(paths, layout.levels, spec, (-1.0, 0.0, 1.0))

        counts = np.vstack(map_chunks(work, chunk_bounds(n_replicas, chunk), threads)).astype(float)
        all_counts.append(counts)
        minus, zero, plus = counts[:, 0], counts[:, 1], counts[:, 2]
        second = float(np.mean(minus ** 2))
        per_seed.append({
            "seed": float(seed),
            "mean_count": float(np.mean(plus)),
            "second_moment": second,
            "pz_lower": float(np.mean(plus) ** 2 / second) if second > 0 else 0.0,
            "p_nonempty": float(np.mean(zero >= 1)),
        })

    counts = np.vstack(all_counts)
    minus, zero, plus = counts[:, 0], counts[:, 1], counts[:, 2]
    first_seed = int(seeds[0])
    mean_count = EstimateCI.from_samples(plus, seed=first_seed, stream=Stream.FIELD.name)
    second_moment = EstimateCI.from_samples(minus ** 2, seed=first_seed, stream=Stream.FIELD.name)
    p_nonempty = EstimateCI.from_proportion(int(np.sum(zero >= 1)), zero.size, seed=first_seed,
                                            stream=Stream.FIELD.name)

    flags = list(config.flags)
    if mean_count.value == 0.0:
        flags.append("degenerate")
        pz = 0.0
    elif second_moment.value == 0.0:
        flags.append("degenerate")
        pz = 0.0
    else:
        pz = mean_count.value ** 2 / second_moment.value
    if pz > 1.0:
        flags.append("pz_lower_clipped")
        pz = 1.0

    zero_second = float(np.mean(zero ** 2))
    same_set_ratio = float(np.mean(zero)) ** 2 / zero_second if zero_second > 0 else 0.0
    bias, se = _pz_jackknife(plus, minus)
    logger.info("moment_report", replicas=int(counts.shape[0]), pz_lower=pz, p_nonempty=p_nonempty.value)
    return MomentReport(
        mean_count=mean_count,
        second_moment=second_moment,
        pz_lower=pz,
        p_nonempty=p_nonempty,
        same_set_ratio=same_set_ratio,
        jackknife_bias=bias,
        jackknife_se=se,
        per_seed=per_seed,
        flags=flags,
        **config.metadata(),
    )


class TailPoint(BaseModel):
    y: float
    exceedances: int
    p_hat: float
    lo: float
    hi: float
    usable: bool
    left_count: int
    left_p_hat: float
    left_lo: float
    left_hi: float


class TailFit(BaseModel):
    points: List[TailPoint]
    slope: Optional[float] = None
    slope_se: Optional[float] = None
    slope_ci: Optional[tuple[float, float]] = None
    intercept: Optional[float] = None
    flags: List[str] = Field(default_factory=list)


def _wilson(k: int, n: int) -> tuple[float, float]:
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


def tail_statistics(max_samples: Sequence[float], config: Union[WalkConfig, float], y_grid: Sequence[float]) -> TailFit:
    """
    Right and left tails of recentered maxima and the fitted right-tail exponent

    log P(X > y) - log y + y^2/n is regressed on y by weighted least squares
    (weights k/(1 - p̂) from the binomial variance of log p̂); the slope
    estimates -2. Grid points with fewer than 10 exceedances are flagged
    unusable and left out of the fit.

    Args:
        max_samples: At least 10^4 recentered maxima
        config: Walk configuration or the scale n directly
        y_grid: Positive thresholds
    """
    x = np.asarray(max_samples, dtype=float)
    if x.size < MIN_TAIL_SAMPLES:
        raise DomainError(f"tail_statistics needs at least {MIN_TAIL_SAMPLES} samples, got {x.size}")
    n = float(config.n) if isinstance(config, WalkConfig) else float(config)
    total = int(x.size)
    flags: List[str] = []
    if np.all(x == x[0]):
        flags.append("degenerate")

    points = []
    for y in y_grid:
        k = int(np.sum(x > y))
        k_left = int(np.sum(x < -y))
        lo, hi = _wilson(k, total)
        left_lo, left_hi = _wilson(k_left, total)
        usable = k >= MIN_TAIL_EXCEEDANCES and k < total and y > 0
        points.append(TailPoint(y=float(y), exceedances=k, p_hat=k / total, lo=lo, hi=hi, usable=usable,
                                left_count=k_left, left_p_hat=k_left / total, left_lo=left_lo, left_hi=left_hi))

    fit = [pt for pt in points if pt.usable]
    if "degenerate" in flags or len(fit) < 2:
        if "degenerate" not in flags:
            flags.append("too_few_usable_points")
        return TailFit(points=points, flags=flags)

    ys = np.array([pt.y for pt in fit])
    p = np.array([pt.p_hat for pt in fit])
    z = np.log(p) - np.log(ys) + ys ** 2 / n
    w = np.array([pt.exceedances for pt in fit]) / (1.0 - p)
    design = np.column_stack([np.ones_like(ys), ys])
    normal = design.T @ (w[:, None] * design)
    coef = np.linalg.solve(normal, design.T @ (w * z))
    cov = np.linalg.inv(normal)
    se = math.sqrt(cov[1, 1])
    quantile = stats.norm.ppf(0.975)
    logger.info("tail_fit", slope=float(coef[1]), se=se, points=len(fit))
    return TailFit(points=points, slope=float(coef[1]), slope_se=se,
                   slope_ci=(float(coef[1] - quantile * se), float(coef[1] + quantile * se)),
                   intercept=float(coef[0]), flags=flags)


def synthetic_tail_samples(rng_seed: int, size: int) -> np.ndarray:
    """
    Draws with survival P(X > y) = 2y e^{1-2y} for y >= 1/2, by inverting
    through the lower branch of the Lambert W function
    """
    u = 1.0 - keyed_generator(rng_seed, Stream.SYNTHETIC, 0).random(size)  # (0, 1]
    return -special.lambertw(-u / math.e, k=-1).real / 2.0


def spread_statistics(samples: Sequence[float]) -> Dict[str, float]:
    """Median and interquartile range"""
    q1, med, q3 = np.percentile(np.asarray(samples, dtype=float), [25.0, 50.0, 75.0])
    return {"median": float(med), "iqr": float(q3 - q1)}
