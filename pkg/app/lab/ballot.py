# app/lab/ballot.py
"""
Corridor probabilities for Gaussian bridges.

Paths are sampled by sequential conditioning: given S_{k-1} = s and the
variance R still to come after step k, the increment X_k is normal with mean
σ_k^2 (b - s)/(σ_k^2 + R) and variance σ_k^2 R/(σ_k^2 + R), so every path
ends exactly at b.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field
from scipy import stats

from app.config.config import get_settings
from app.errors import ConfigError, DomainError, PreconditionError
from app.lab.parallel import map_chunks, pairwise_sum
from app.lab.rng import Stream, chunk_bounds, keyed_generator
from app.lab.schemas import EstimateCI

logger = structlog.get_logger(__name__)

BarrierLike = Union[float, np.ndarray, List[float]]
REFLECTION_STEP = 1.0 / 64.0


class Monitoring(str, Enum):
    DISCRETE = "discrete"
    BRIDGE = "bridge"

    @classmethod
    def get_default(cls) -> "Monitoring":
        return cls.BRIDGE


def _as_barrier(value: BarrierLike, t: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(t + 1, float(arr))
    if arr.shape != (t + 1,):
        raise ConfigError(f"{name} barrier needs t + 1 = {t + 1} values, got {arr.shape[0]}")
    return arr


@dataclass(frozen=True)
class BridgeSpec:
    """
    A walk from a (time 0) to b (time t) with independent N(0, σ_k^2) steps
    and the corridor lower_k <= S_k <= upper_k for k = 0..t
    """
    t: int
    variances: np.ndarray
    a: float
    b: float
    lower: np.ndarray
    upper: np.ndarray
    monitoring: Monitoring = Monitoring.BRIDGE
    kappa: float = field(default=0.0)

    @classmethod
    def build(cls, t: int, a: float, b: float, lower: BarrierLike = 0.0, upper: BarrierLike = math.inf,
              variances: Optional[BarrierLike] = None, monitoring: Monitoring = Monitoring.BRIDGE,
              kappa: Optional[float] = None) -> "BridgeSpec":
        if t < 1:
            raise ConfigError(f"t must be >= 1, got {t}")
        var = np.ones(t) if variances is None else np.asarray(variances, dtype=float)
        if var.ndim == 0:
            var = np.full(t, float(var))
        if var.shape != (t,):
            raise ConfigError(f"need one variance per step, got {var.shape[0]} for t = {t}")
        if np.any(var <= 0):
            raise ConfigError("step variances must be positive")
        implied = float(min(var.min(), 1.0 / var.max(), 1.0))
        if kappa is None:
            kappa = implied
        elif not 0 < kappa <= 1 or np.any(var < kappa) or np.any(var > 1.0 / kappa):
            raise ConfigError(f"variances must lie in [kappa, 1/kappa] with kappa in (0, 1], kappa = {kappa}")
        return cls(t=t, variances=var, a=float(a), b=float(b), lower=_as_barrier(lower, t, "lower"),
                   upper=_as_barrier(upper, t, "upper"), monitoring=Monitoring(monitoring), kappa=kappa)

    @property
    def sigma(self) -> float:
        return float(np.sum(self.variances))

    def check_endpoints(self) -> None:
        for name, k, x in (("start", 0, self.a), ("end", self.t, self.b)):
            if not self.lower[k] < x < self.upper[k]:
                raise PreconditionError(
                    f"{name} point {x} lies outside the corridor ({self.lower[k]}, {self.upper[k]}) at time {k}"
                )

    def scaled(self, lam: float) -> "BridgeSpec":
        """Variances times lam; barriers and endpoints times sqrt(lam)"""
        root = math.sqrt(lam)
        return BridgeSpec(t=self.t, variances=self.variances * lam, a=self.a * root, b=self.b * root,
                          lower=self.lower * root, upper=self.upper * root, monitoring=self.monitoring,
                          kappa=min(self.kappa * lam, self.kappa / lam, 1.0))


def bridge_stay_positive_exact(x: float, y: float, t: float) -> float:
    """P(a Brownian bridge from x to y over time t stays positive) = 1 - e^{-2xy/t}"""
    if x <= 0 or y <= 0 or t <= 0:
        raise DomainError(f"x, y and t must be positive, got x={x}, y={y}, t={t}")
    return -math.expm1(-2.0 * x * y / t)


def _no_crossing(d0: np.ndarray, d1: np.ndarray, var: float) -> np.ndarray:
    """Probability that a bridge with end distances d0, d1 to a line never touches it"""
    ok = (d0 > 0) & (d1 > 0)
    with np.errstate(invalid="ignore", over="ignore"):
        p = -np.expm1(-2.0 * d0 * d1 / var)
    return np.where(ok, p, 0.0)


def _corridor_weights(spec: BridgeSpec, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    z = rng.standard_normal((size, spec.t))
    remaining = np.concatenate([np.cumsum(spec.variances[::-1])[::-1][1:], [0.0]])
    s = np.full(size, spec.a)
    w = np.ones(size)
    for k in range(1, spec.t + 1):
        var, rem = spec.variances[k - 1], remaining[k - 1]
        if rem > 0:
            x = s + var * (spec.b - s) / (var + rem) + math.sqrt(var * rem / (var + rem)) * z[:, k - 1]
        else:
            x = np.full(size, spec.b)
        if spec.monitoring is Monitoring.BRIDGE:
            w *= _no_crossing(s - spec.lower[k - 1], x - spec.lower[k], var)
            w *= _no_crossing(spec.upper[k - 1] - s, spec.upper[k] - x, var)
        elif k < spec.t:
            w *= (x >= spec.lower[k]) & (x <= spec.upper[k])
        s = x
    return w, s


def sample_bridge_endpoints(spec: BridgeSpec, rng_seed: int, M: int) -> np.ndarray:
    """Endpoints S_t of the sequential sampler (every one equals b)"""
    _, ends = _corridor_weights(spec, keyed_generator(rng_seed, Stream.BALLOT, 0), M)
    return ends


def walk_corridor_mc(spec: BridgeSpec, rng_seed: int, M: int, threads: int = 1) -> EstimateCI:
    """
    P(lower_k <= S_k <= upper_k for all k) for the walk conditioned to go from a to b

    Discrete monitoring checks the nodes; bridge monitoring weights each path
    by the chance that the Brownian bridge between consecutive nodes stays
    inside the linearly interpolated corridor.

    Raises:
        PreconditionError: If an endpoint is not strictly inside the corridor
    """
    if M < 1000:
        raise DomainError(f"walk_corridor_mc needs M >= 1000, got {M}")
    spec.check_endpoints()

    def work(idx: int, start: int, size: int) -> tuple[float, float]:
        w, _ = _corridor_weights(spec, keyed_generator(rng_seed, Stream.BALLOT, idx), size)
        return float(np.sum(w)), float(np.sum(w * w))

    sums = map_chunks(work, chunk_bounds(M, get_settings().replica_chunk), threads)
    total = pairwise_sum([s for s, _ in sums])
    total_sq = pairwise_sum([q for _, q in sums])
    if spec.monitoring is Monitoring.DISCRETE:
        return EstimateCI.from_proportion(int(round(total)), M, seed=rng_seed, stream=Stream.BALLOT.name)
    return EstimateCI.from_moments(total, total_sq, M, seed=rng_seed, stream=Stream.BALLOT.name)


def barrier_distance(a: float, b: float, y: float) -> float:
    """d = min(|y - a|, |y - b|, |a|, |b|)"""
    return min(abs(y - a), abs(y - b), abs(a), abs(b))


def curved_barrier_spec(t: int, a: float, b: float, y: float, alpha: float, delta: float,
                        variances: Optional[BarrierLike] = None, lower_sign: float = 1.0,
                        monitoring: Monitoring = Monitoring.BRIDGE) -> Tuple[BridgeSpec, List[str]]:
    """
    Corridor u_s <= S_s <= v_s with u_s = lower_sign * min(s, t-s)^alpha and
    v_s = y + min(s, t-s)^delta

    Returns:
        The corridor and the flags for ranges the configuration lies outside of

    Raises:
        ConfigError: Unless delta > 1/2 > alpha > 0 and |lower_sign| <= 1
    """
    if not (delta > 0.5 > alpha > 0):
        raise ConfigError(f"need delta > 1/2 > alpha > 0, got alpha={alpha}, delta={delta}")
    if abs(lower_sign) > 1:
        raise ConfigError("|lower_sign| must be <= 1 so that |u_s| <= min(s, t-s)^alpha")
    flags = []
    if not (1 <= a <= y - 1 and 1 <= b <= y - 1):
        flags.append("endpoints_outside_1_y_minus_1")
    if y > t ** 0.1:
        flags.append("y_above_t_to_one_tenth")
    if y < 10:
        flags.append("y_below_10")
    s = np.arange(t + 1, dtype=float)
    edge = np.minimum(s, t - s)
    spec = BridgeSpec.build(t, a, b, lower=lower_sign * edge ** alpha, upper=y + edge ** delta,
                            variances=variances, monitoring=monitoring)
    return spec, flags


def ballot_asymptotic_ratio(spec: BridgeSpec, rng_seed: int, M: int, threads: int = 1) -> float:
    """Monte-Carlo corridor probability times σ/(2ab)"""
    estimate = walk_corridor_mc(spec, rng_seed, M, threads)
    ratio = estimate.value * spec.sigma / (2.0 * spec.a * spec.b)
    logger.info("ballot_ratio", t=spec.t, a=spec.a, b=spec.b, estimate=estimate.value, ratio=ratio)
    return ratio


class BallotReport(BaseModel):
    estimate: EstimateCI
    exact_reference: Optional[float] = None
    ratio: float
    d: Optional[float] = None
    free_end_constant: float
    upper_constant: float
    flags: List[str] = Field(default_factory=list)


def corridor_report(spec: BridgeSpec, rng_seed: int, M: int, threads: int = 1,
                    y: Optional[float] = None, flags: Optional[List[str]] = None) -> BallotReport:
    """
    Corridor estimate with its references: the Brownian formula 1 - e^{-2ab/σ}
    when the corridor is the half line S >= 0, the ratio to 2ab/σ, and the
    measured constants P·sqrt(σ)/a and P·σ/(ab)
    """
    estimate = walk_corridor_mc(spec, rng_seed, M, threads)
    sigma = spec.sigma
    flat = bool(np.all(spec.lower == 0.0) and np.all(np.isposinf(spec.upper)))
    exact = bridge_stay_positive_exact(spec.a, spec.b, sigma) if flat else None
    return BallotReport(
        estimate=estimate,
        exact_reference=exact,
        ratio=estimate.value * sigma / (2.0 * spec.a * spec.b),
        d=barrier_distance(spec.a, spec.b, y) if y is not None else None,
        free_end_constant=estimate.value * math.sqrt(sigma) / spec.a,
        upper_constant=estimate.value * sigma / (spec.a * spec.b),
        flags=list(flags or []),
    )


def _bridge_extreme(x0: np.ndarray, x1: np.ndarray, var: float, u: np.ndarray, sign: float) -> np.ndarray:
    """Max (sign=+1) or min (sign=-1) of a Brownian bridge from x0 to x1 over a step of variance var"""
    return 0.5 * (x0 + x1 + sign * np.sqrt((x1 - x0) ** 2 - 2.0 * var * np.log(u)))


class ReflectionCheck(BaseModel):
    lhs: EstimateCI
    rhs: EstimateCI
    subtrahend: float
    holds: bool


def reflection_bound_mc(a: float, c: float, box_a: Tuple[float, float], t: float, rng_seed: int, M: int,
                        threads: int = 1) -> ReflectionCheck:
    """
    P(M_t <= a, m_t >= -c, B_t in A) against P(m_t >= -c, B_t in A) - P(B_t in A - 2a)

    Brownian paths are simulated at step 1/64 and the running extremes are
    corrected by sampling each step's bridge maximum and minimum exactly. The
    subtracted probability is computed in closed form.

    Raises:
        DomainError: If a or c is not positive, or A is not inside [-c, a]
    """
    if a <= 0 or c <= 0 or t <= 0:
        raise DomainError(f"a, c and t must be positive, got a={a}, c={c}, t={t}")
    lo, hi = box_a
    empty = lo > hi
    if not empty and (lo < -c or hi > a):
        raise DomainError(f"box [{lo}, {hi}] must lie inside [-c, a] = [{-c}, {a}]")

    steps = max(int(math.ceil(t / REFLECTION_STEP)), 1)
    dt = t / steps

    def work(idx: int, start: int, size: int) -> tuple[int, int]:
        rng = keyed_generator(rng_seed, Stream.REFLECTION, idx)
        x = np.zeros(size)
        top = np.zeros(size)
        bottom = np.zeros(size)
        for _ in range(steps):
            nxt = x + math.sqrt(dt) * rng.standard_normal(size)
            u_max = 1.0 - rng.random(size)
            u_min = 1.0 - rng.random(size)
            top = np.maximum(top, _bridge_extreme(x, nxt, dt, u_max, 1.0))
            bottom = np.minimum(bottom, _bridge_extreme(x, nxt, dt, u_min, -1.0))
            x = nxt
        in_box = (x >= lo) & (x <= hi) if not empty else np.zeros(size, dtype=bool)
        left = in_box & (bottom >= -c)
        both = left & (top <= a)
        return int(both.sum()), int(left.sum())

    sums = map_chunks(work, chunk_bounds(M, get_settings().replica_chunk), threads)
    both = sum(s[0] for s in sums)
    left = sum(s[1] for s in sums)
    if empty:
        subtrahend = 0.0
    else:
        scale = math.sqrt(t)
        subtrahend = float(stats.norm.cdf((hi - 2 * a) / scale) - stats.norm.cdf((lo - 2 * a) / scale))

    lhs = EstimateCI.from_proportion(int(both), M, seed=rng_seed, stream=Stream.REFLECTION.name)
    p_left = EstimateCI.from_proportion(int(left), M, seed=rng_seed, stream=Stream.REFLECTION.name)
    rhs = EstimateCI(value=p_left.value - subtrahend, se=p_left.se, n=M, seed=rng_seed,
                     stream=Stream.REFLECTION.name)
    holds = lhs.value >= rhs.value - 4.0 * math.hypot(lhs.se, rhs.se)
    logger.info("reflection_check", lhs=lhs.value, rhs=rhs.value, holds=holds)
    return ReflectionCheck(lhs=lhs, rhs=rhs, subtrahend=subtrahend, holds=holds)
