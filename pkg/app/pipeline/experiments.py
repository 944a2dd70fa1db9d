# app/pipeline/experiments.py
"""
Parameter models and runners, one per subcommand.

Every runner takes the resolved ExperimentConfig and its validated parameters
and returns an ExperimentResult: tables (CSV), documents (JSON) and the
invariant checks the experiment asserts about its own output.
"""

import math
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple, Type

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field
from typing_extensions import Annotated

from app.config.config import ExperimentConfig, Subcommand, get_settings, sieve_cache_path
from app.errors import ConfigError, ResourceLimitError
from app.lab import ballot, barriers, dirichlet, models, mollifier, zeta
from app.lab.kernels import KernelShape
from app.lab.primes import K_MIN, PrimePartition, measure_pnt_decay, pnt_tolerance, rho_k, sieve_primes, sk2
from app.lab.schemas import Convention, SumMode
from app.pipeline.experiment_state import ExperimentResult, InvariantCheck
from app.providers.partition_provider import get_partition, read_partition, write_partition

logger = structlog.get_logger(__name__)


def _split(value: Any) -> Any:
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    if isinstance(value, (int, float)):
        return [value]
    return value


FloatList = Annotated[List[float], BeforeValidator(_split)]
IntList = Annotated[List[int], BeforeValidator(_split)]


class ExperimentParams(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _partition(config: ExperimentConfig, limit: Optional[int]) -> PrimePartition:
    return get_partition(limit, config.sieve_cache)


def _check_grid(config: ExperimentConfig, layout: models.FieldLayout) -> None:
    if config.grid_max is not None and layout.grid.size > config.grid_max:
        raise ResourceLimitError(f"field grid has {layout.grid.size} points, above grid_max = {config.grid_max}")


def _finite_check(name: str, values) -> InvariantCheck:
    arr = np.asarray(values, dtype=float)
    return InvariantCheck(name=name, passed=bool(np.all(np.isfinite(arr))), detail=f"{arr.size} values")


# sieve-cache

class SieveCacheParams(ExperimentParams):
    limit: Optional[int] = Field(default=None, ge=2)
    path: Optional[str] = None


def run_sieve_cache(config: ExperimentConfig, params: SieveCacheParams) -> ExperimentResult:
    settings = get_settings()
    limit = params.limit or settings.sieve_limit
    partition = PrimePartition.from_primes(sieve_primes(limit), limit)
    path = Path(params.path or config.sieve_cache or sieve_cache_path(settings, limit))
    write_partition(partition, path)
    reread = read_partition(path)

    ks = sorted(partition.blocks)
    table = pd.DataFrame({
        "k": ks,
        "count": [int(partition.blocks[k].size) for k in ks],
        "complete": [partition.is_complete(k) for k in ks],
    })
    same = reread.sieve_limit == limit and np.array_equal(reread.explicit_primes(), partition.explicit_primes())
    return ExperimentResult(
        tables={"sieve_blocks": table},
        documents={"sieve_cache": {"limit": limit, "primes": int(partition.explicit_primes().size), "path": str(path),
                                   "largest_complete_block": partition.largest_complete_block()}},
        checks=[InvariantCheck(name="cache_roundtrip", passed=bool(same), detail=str(path))],
    )


# walk / euler-check / zeta-max

class WalkParams(ExperimentParams):
    t: float = Field(gt=0.0)
    h: FloatList = Field(default_factory=lambda: [0.0])
    k_lo: int = K_MIN
    k_hi: int = 2
    convention: Convention = Convention.get_default()
    limit: Optional[int] = Field(default=None, ge=2)


def run_walk(config: ExperimentConfig, params: WalkParams) -> ExperimentResult:
    partition = _partition(config, params.limit)
    rows = []
    for h in params.h:
        sample = dirichlet.partial_sums(params.t, h, params.k_lo, params.k_hi, partition, params.convention)
        rows.extend({"t": params.t, "h": h, "k": int(k), "S_k": float(v)} for k, v in zip(sample.ks, sample.values))
    table = pd.DataFrame(rows, columns=["t", "h", "k", "S_k"])
    return ExperimentResult(tables={"walk": table}, checks=[_finite_check("finite_partial_sums", table["S_k"])])


class EulerCheckParams(ExperimentParams):
    t: FloatList = Field(default_factory=lambda: [1000.0])
    h: float = 0.0
    X: float = math.exp(math.e)
    kernel: KernelShape = KernelShape.JACKSON
    tol: float = Field(default=1e-6, gt=0.0)


def run_euler_check(config: ExperimentConfig, params: EulerCheckParams) -> ExperimentResult:
    records, checks = [], []
    for t in params.t:
        res = dirichlet.smoothed_euler_product(t, params.h, params.X, kernel=params.kernel, tol=params.tol)
        records.append({"t": t, "h": params.h, "X": params.X, "value_re": res.value.real,
                        "value_im": res.value.imag, "abs_err": res.abs_err})
        if t >= 1000:
            gap = abs(res.value - 1.0)
            checks.append(InvariantCheck(name=f"euler_product_near_one_t{t:g}", passed=gap <= 0.05,
                                         detail=f"|value - 1| = {gap:.3e}"))
    return ExperimentResult(documents={"euler_check": {"records": records}}, checks=checks)


class ZetaMaxParams(ExperimentParams):
    t: FloatList
    half_width: float = Field(default=1.0, ge=0.0, le=2.0)
    coarse_step: Optional[float] = Field(default=None, gt=0.0)
    refine_depth: int = Field(default=20, ge=0)


def run_zeta_max(config: ExperimentConfig, params: ZetaMaxParams) -> ExperimentResult:
    rows = []
    for t in params.t:
        step = params.coarse_step or 0.5 * 2.0 * math.pi / math.log(t)
        h_star, value = zeta.max_log_abs_zeta(t, params.half_width, step, params.refine_depth)
        n = math.log(math.log(t))
        rows.append({"t": t, "h_star": h_star, "max_log_abs": value, "n": n,
                     "recentering": n - 0.75 * math.log(n)})
    table = pd.DataFrame(rows, columns=["t", "h_star", "max_log_abs", "n", "recentering"])
    return ExperimentResult(tables={"zeta_max": table}, checks=[_finite_check("finite_maxima", table["max_log_abs"])])


# model-sample / model-verify

class ModelSampleParams(ExperimentParams):
    model: Literal["steinhaus", "gaussian"] = "steinhaus"
    h: FloatList = Field(default_factory=lambda: [0.0])
    k_max: int = Field(default=2, ge=K_MIN)
    delta_h: float = Field(default=0.0, ge=0.0)
    limit: Optional[int] = Field(default=None, ge=2)


def _trajectory_rows(paths: np.ndarray, hs, ks) -> pd.DataFrame:
    """paths: (replicas, K, H)"""
    reps, n_k, n_h = paths.shape
    return pd.DataFrame({
        "replica": np.repeat(np.arange(reps), n_k * n_h),
        "h": np.tile(np.asarray(hs, dtype=float), reps * n_k),
        "k": np.tile(np.repeat(np.asarray(ks), n_h), reps),
        "S_k": paths.ravel(),
    })


def run_model_sample(config: ExperimentConfig, params: ModelSampleParams) -> ExperimentResult:
    partition = _partition(config, params.limit)
    ks = list(range(K_MIN, params.k_max + 1))
    if params.model == "steinhaus":
        hs = list(params.h)
        increments = np.stack([models.steinhaus_increments(config.seed, partition, k, hs, config.replicas,
                                                           config.threads) for k in ks], axis=1)
        paths = np.cumsum(increments, axis=1)
        draw = models.sample_steinhaus(config.seed, partition, hs, params.k_max)
        stored = draw.increments()
        replay = all(np.allclose(draw.recompute_increment(int(k)), stored[:, i], rtol=0.0, atol=1e-12)
                     for i, k in enumerate(draw.ks))
        checks = [InvariantCheck(name="phases_reproduce_increments", passed=replay)]
    else:
        hs = [0.0, params.delta_h]
        moments = models.LevelMoments.from_partition(partition, ks, params.delta_h if params.delta_h > 0 else None)
        pair = models.sample_gaussian_pair(config.seed, params.delta_h, ks, moments, config.replicas)
        paths = pair.paths
        same = params.delta_h > 0 or bool(np.array_equal(paths[..., 0], paths[..., 1]))
        checks = [InvariantCheck(name="zero_shift_gives_equal_walks", passed=same)]
    return ExperimentResult(tables={"trajectories": _trajectory_rows(paths, hs, ks)}, checks=checks)


class ModelVerifyParams(ExperimentParams):
    k_max: int = Field(default=2, ge=K_MIN)
    delta_h: float = Field(default=0.5, gt=0.0, le=1.0)
    box_lo: float = -0.5
    box_hi: float = 0.5
    berry_replicas: int = Field(default=10_000, ge=10_000)
    exp_j: int = 0
    exp_k: int = 2
    exp_lam: float = 1.0
    poly_t: float = 1e4
    poly_length: int = Field(default=1000, ge=2)
    limit: Optional[int] = Field(default=None, ge=2)


def _variance_se(x: np.ndarray) -> Tuple[float, float]:
    """Sample variance of mean-zero draws and its standard error"""
    sq = x ** 2
    return float(np.mean(sq)), float(np.std(sq, ddof=1) / math.sqrt(x.size))


def run_model_verify(config: ExperimentConfig, params: ModelVerifyParams) -> ExperimentResult:
    partition = _partition(config, params.limit)
    checks, levels = [], []
    for k in range(K_MIN, params.k_max + 1):
        y = models.steinhaus_increments(config.seed, partition, k, [0.0, params.delta_h], config.replicas,
                                        config.threads)
        var, var_se = _variance_se(y[:, 0])
        prod = y[:, 0] * y[:, 1]
        cov, cov_se = float(np.mean(prod)), float(np.std(prod, ddof=1) / math.sqrt(prod.size))
        exact_var = sk2(partition, k, SumMode.EXACT)
        exact_cov = rho_k(partition, k, params.delta_h, SumMode.EXACT)
        levels.append({"k": k, "variance": var, "variance_se": var_se, "sk2": exact_var,
                       "covariance": cov, "covariance_se": cov_se, "rho_k": exact_cov})
        checks.append(InvariantCheck(name=f"steinhaus_variance_k{k}", passed=abs(var - exact_var) <= 4 * var_se,
                                     detail=f"gap {var - exact_var:.3e}, se {var_se:.3e}"))

    box = (params.box_lo, params.box_hi)
    max_share = get_settings().steinhaus_max_gaussian_share
    berry = []
    for k in range(K_MIN, params.k_max + 1):
        gap = models.berry_esseen_gap(config.seed, partition, k, box, box, params.delta_h, params.berry_replicas,
                                      config.threads)
        share = models.gaussian_share(partition, k)
        berry.append({"k": k, "gap": gap, "gaussian_share": share})
        checks.append(InvariantCheck(name=f"steinhaus_phases_k{k}", passed=share <= max_share,
                                     detail=f"gaussian share {share:.3f}, limit {max_share:.3f}"))
    s2 = sk2(partition, params.k_max, SumMode.EXACT)
    rho = rho_k(partition, params.k_max, params.delta_h, SumMode.EXACT)
    decoupling = models.gaussian_decoupling_check(s2, rho, box, box)
    checks.append(InvariantCheck(name="decoupling_bound", passed=decoupling.holds,
                                 detail=f"coupled {decoupling.coupled:.4f}, bound {decoupling.factor * decoupling.decoupled:.4f}"))

    exp_moment = models.exponential_moment_constant(config.seed, partition, params.exp_j, params.exp_k,
                                                    params.exp_lam, config.replicas, config.threads)
    primes = partition.explicit_primes()
    primes = primes[primes <= params.poly_length]
    poly = dirichlet.DirichletPoly(primes, primes.astype(float) ** -0.5)
    ratio = dirichlet.discretization_ratio(poly, params.poly_t, 1)
    checks.append(InvariantCheck(name="discretized_bound_dominates", passed=ratio <= 1.0 + 1e-9,
                                 detail=f"dense max / bound = {ratio:.4f}"))

    decay = measure_pnt_decay(partition)
    agreement = {}
    for k in range(1, partition.largest_complete_block() + 1):
        pnt_gap = abs(sk2(partition, k, SumMode.PNT) - sk2(partition, k, SumMode.EXACT))
        agreement[str(k)] = {"gap": pnt_gap, "tolerance": pnt_tolerance(k), "within": pnt_gap <= pnt_tolerance(k)}
    report = {
        "levels": levels,
        "berry_esseen": {"box": list(box), "delta_h": params.delta_h, "replicas": params.berry_replicas,
                         "levels": berry},
        "decoupling": decoupling.model_dump(mode="json"),
        "exponential_moment": exp_moment.model_dump(mode="json"),
        "discretization_ratio": ratio,
        "pnt_decay": {"gaps": {str(k): v for k, v in decay["gaps"].items()}, "rate": decay["rate"]},
        "pnt_agreement": agreement,
        "seed": config.seed,
    }
    return ExperimentResult(documents={"model_verify": report}, checks=checks)


# barrier-dump / moments / tail

class WalkScaleParams(ExperimentParams):
    T: Optional[float] = Field(default=None, gt=0.0)
    n: Optional[int] = Field(default=None, ge=2)
    y: float = Field(default=0.0, ge=0.0)
    convention: Convention = Convention.get_default()

    def walk_config(self) -> barriers.WalkConfig:
        if self.T is not None:
            return barriers.WalkConfig.from_height(self.T, self.y, self.convention)
        if self.n is None:
            raise ConfigError("either T or n is required")
        return barriers.WalkConfig.build(self.n, self.y, self.convention)


def run_barrier_dump(config: ExperimentConfig, params: WalkScaleParams) -> ExperimentResult:
    wc = params.walk_config()
    spec = barriers.barrier_values(wc)
    table = pd.DataFrame({"k": spec.ks, "L_k": spec.L, "U_k": spec.U})
    ordered = bool(np.all(spec.L <= spec.U))
    return ExperimentResult(
        tables={"barriers": table},
        documents={"walk_config": wc.model_dump(mode="json") | wc.metadata()},
        checks=[InvariantCheck(name="lower_below_upper", passed=ordered)],
    )


class MomentsParams(WalkScaleParams):
    seeds: IntList = Field(default_factory=list)
    limit: Optional[int] = Field(default=None, ge=2)


def run_moments(config: ExperimentConfig, params: MomentsParams) -> ExperimentResult:
    wc = params.walk_config()
    layout = wc.layout()
    _check_grid(config, layout)
    partition = _partition(config, params.limit)
    level_moments = models.LevelMoments.from_partition(partition, wc.levels)
    spec = barriers.barrier_values(wc)
    seeds = params.seeds or [config.seed]
    report = barriers.moment_report(wc, spec, config.replicas, seeds, level_moments, config.threads)
    checks = [
        InvariantCheck(name="pz_lower_in_unit_interval", passed=0.0 <= report.pz_lower <= 1.0),
        InvariantCheck(name="paley_zygmund", passed=report.paley_zygmund_holds(),
                       detail=f"pz_lower {report.pz_lower:.4f}, P(#G >= 1) {report.p_nonempty.value:.4f} "
                              f"± {report.p_nonempty.se:.4f}"),
        InvariantCheck(name="same_set_ratio_below_p_nonempty",
                       passed=report.same_set_ratio <= report.p_nonempty.value + 1e-12,
                       detail=f"{report.same_set_ratio:.4f} vs {report.p_nonempty.value:.4f}"),
    ]
    return ExperimentResult(documents={"moments": report.model_dump(mode="json")}, checks=checks)


class TailParams(ExperimentParams):
    source: Literal["field", "synthetic"] = "field"
    n: int = Field(default=8, ge=2)
    y_grid: FloatList = Field(default_factory=lambda: [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0])
    convention: Convention = Convention.FULL
    tightness_n: IntList = Field(default_factory=list)
    limit: Optional[int] = Field(default=None, ge=2)


def _recentered_maxima(config: ExperimentConfig, partition: PrimePartition, n: int,
                       convention: Convention) -> np.ndarray:
    wc = barriers.WalkConfig.build(n, 0.0, convention)
    layout = wc.layout()
    _check_grid(config, layout)
    level_moments = models.LevelMoments.from_partition(partition, wc.levels)
    maxima = models.field_maxima(config.seed, layout, level_moments, config.replicas, config.threads)
    return maxima - wc.recentering


def run_tail(config: ExperimentConfig, params: TailParams) -> ExperimentResult:
    checks = []
    if params.source == "synthetic":
        samples = barriers.synthetic_tail_samples(config.seed, config.replicas)
        fit = barriers.tail_statistics(samples, math.inf, params.y_grid)
        near = fit.slope is not None and abs(fit.slope + 2.0) <= 4.0 * fit.slope_se
        checks.append(InvariantCheck(name="synthetic_slope_near_minus_two", passed=near,
                                     detail=f"slope {fit.slope}, se {fit.slope_se}"))
        partition = None
    else:
        partition = _partition(config, params.limit)
        samples = _recentered_maxima(config, partition, params.n, params.convention)
        fit = barriers.tail_statistics(samples, params.n, params.y_grid)

    tightness = {}
    for n in params.tightness_n:
        partition = partition or _partition(config, params.limit)
        tightness[str(n)] = barriers.spread_statistics(_recentered_maxima(config, partition, n, params.convention))
    document = {"fit": fit.model_dump(mode="json"), "spread": barriers.spread_statistics(samples),
                "tightness": tightness}
    if tightness:
        medians = [v["median"] for v in tightness.values()]
        document["median_drift"] = max(medians) - min(medians)

    table = pd.DataFrame([{"y": p.y, "p_hat": p.p_hat, "lo": p.lo, "hi": p.hi} for p in fit.points],
                         columns=["y", "p_hat", "lo", "hi"])
    checks.append(InvariantCheck(name="wilson_interval_contains_estimate",
                                 passed=bool(np.all((table["lo"] <= table["p_hat"]) & (table["p_hat"] <= table["hi"])))))
    return ExperimentResult(tables={"tail": table}, documents={"tail_fit": document}, checks=checks)


# ballot

class BallotParams(ExperimentParams):
    t: int = Field(default=100, ge=1)
    a: float = 2.0
    b: float = 2.0
    alpha: Optional[float] = None
    delta: Optional[float] = None
    y: Optional[float] = None
    lower: float = 0.0
    upper: float = math.inf
    lower_sign: float = 1.0
    monitoring: ballot.Monitoring = ballot.Monitoring.get_default()
    reflection: bool = False
    ref_a: float = 1.0
    ref_c: float = 1.0
    ref_lo: float = -0.5
    ref_hi: float = 0.5
    ref_time: float = 1.0


def run_ballot(config: ExperimentConfig, params: BallotParams) -> ExperimentResult:
    curved = (params.alpha, params.delta, params.y)
    if any(v is not None for v in curved):
        if any(v is None for v in curved):
            raise ConfigError("curved corridors need alpha, delta and y together")
        spec, flags = ballot.curved_barrier_spec(params.t, params.a, params.b, params.y, params.alpha, params.delta,
                                                 lower_sign=params.lower_sign, monitoring=params.monitoring)
    else:
        spec = ballot.BridgeSpec.build(params.t, params.a, params.b, lower=params.lower, upper=params.upper,
                                       monitoring=params.monitoring)
        flags = []
    report = ballot.corridor_report(spec, config.seed, config.replicas, config.threads, y=params.y, flags=flags)
    document: Dict[str, Any] = {
        "estimate": report.estimate.value,
        "se": report.estimate.se,
        "exact_reference": report.exact_reference,
        "ratio": report.ratio,
        "report": report.model_dump(mode="json"),
    }
    checks = []
    if report.exact_reference is not None and spec.monitoring is ballot.Monitoring.BRIDGE:
        gap = abs(report.estimate.value - report.exact_reference)
        checks.append(InvariantCheck(name="matches_brownian_formula",
                                     passed=gap <= max(4.0 * report.estimate.se, 0.01), detail=f"gap {gap:.3e}"))
    if params.reflection:
        ref = ballot.reflection_bound_mc(params.ref_a, params.ref_c, (params.ref_lo, params.ref_hi), params.ref_time,
                                         config.seed, config.replicas, config.threads)
        document["reflection"] = ref.model_dump(mode="json")
        checks.append(InvariantCheck(name="reflection_inequality", passed=ref.holds,
                                     detail=f"lhs {ref.lhs.value:.4f}, rhs {ref.rhs.value:.4f}"))
    return ExperimentResult(documents={"ballot": document}, checks=checks)


# mollifier-certify

class MollifierParams(ExperimentParams):
    delta: float = Field(default=4.0, ge=3.0)
    A: float = Field(default=3.0, ge=3.0)
    nu: IntList = Field(default_factory=lambda: [4, 8, 16, 32])
    kernel: KernelShape = KernelShape.JACKSON
    half_window: float = Field(default=0.5, gt=0.0)
    tol: float = Field(default=mollifier.CERTIFY_TOLERANCE, gt=0.0)


def run_mollifier_certify(config: ExperimentConfig, params: MollifierParams) -> ExperimentResult:
    approx = mollifier.ApproximationParams(delta=params.delta, A=params.A, nu=max(max(params.nu), 1),
                                           kernel=params.kernel)
    cert = mollifier.certify(approx, sorted(params.nu), config.threads, params.tol, params.half_window)
    margin = min((e.min_log_coefficient_margin for e in cert.truncations), default=math.inf)
    checks = [
        InvariantCheck(name="fourier_support", passed=cert.item1_holds),
        InvariantCheck(name="ordered_between_zero_and_one", passed=cert.item2_holds,
                       detail=f"violation {cert.item2_violation:.3e}"),
        InvariantCheck(name="fourier_l1_bound", passed=cert.item5_holds, detail=f"margin {cert.l1_margin:.3e}"),
        InvariantCheck(name="coefficient_bound", passed=margin >= 0.0, detail=f"min log margin {margin:.3f}"),
        InvariantCheck(name="gap_monotone_on_certified_window", passed=cert.gap_monotone),
    ]
    return ExperimentResult(documents={"mollifier_certificate": cert.model_dump(mode="json")}, checks=checks)


Runner = Callable[[ExperimentConfig, BaseModel], ExperimentResult]

EXPERIMENTS: Dict[Subcommand, Tuple[Type[ExperimentParams], Runner]] = {
    Subcommand.SIEVE_CACHE: (SieveCacheParams, run_sieve_cache),
    Subcommand.WALK: (WalkParams, run_walk),
    Subcommand.EULER_CHECK: (EulerCheckParams, run_euler_check),
    Subcommand.ZETA_MAX: (ZetaMaxParams, run_zeta_max),
    Subcommand.MODEL_SAMPLE: (ModelSampleParams, run_model_sample),
    Subcommand.MODEL_VERIFY: (ModelVerifyParams, run_model_verify),
    Subcommand.BARRIER_DUMP: (WalkScaleParams, run_barrier_dump),
    Subcommand.MOMENTS: (MomentsParams, run_moments),
    Subcommand.TAIL: (TailParams, run_tail),
    Subcommand.BALLOT: (BallotParams, run_ballot),
    Subcommand.MOLLIFIER_CERTIFY: (MollifierParams, run_mollifier_certify),
}


def get_experiment(subcommand: Subcommand) -> Tuple[Type[ExperimentParams], Runner]:
    try:
        return EXPERIMENTS[Subcommand(subcommand)]
    except (KeyError, ValueError):
        raise ConfigError(f"Unexpected subcommand: {subcommand}")
