# app/lab/mollifier.py
"""
Band-limited sandwiches of interval indicators and their Taylor truncations.

G(x) = ∫_I B F(B(x - t)) dt with B = Δ^{2A}, where F is a kernel whose
Fourier transform lives in [-1, 1]. Hence

    G(x)      = K(B(x - lo)) - K(B(x - hi))                 (K the kernel CDF)
    G_hat(ξ)  = F_hat(ξ/B) · L · e^{-πiξ(lo + hi)} · sinc(ξL)  (L = hi - lo)

and G_hat vanishes outside [-B, B]. The degree-ν truncation of
G(x) = ∫ G_hat(ξ) e^{2πiξx} dξ is

    D(x) = Σ_{ℓ<=ν} (2πix)^ℓ/ℓ! · ∫ ξ^ℓ G_hat(ξ) dξ.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field

from app.config.config import get_settings
from app.errors import DomainError, QuadratureError, ResourceLimitError
from app.lab.kernels import Kernel, KernelShape, get_kernel
from app.lab.parallel import map_chunks
from app.lab.quadrature import integrate, panel_rule, uniform_edges

logger = structlog.get_logger(__name__)

MAX_DEGREE = 60
CERTIFY_TOLERANCE = 1e-10
SANDWICH_TOLERANCE = 1e-8
LEAK_FACTOR = 1.05
LEAK_WINDOW = 2e4
_FD_FLOOR = 1e-8
_BATCH = 1 << 16


class IndicatorSign(str, Enum):
    PLUS = "plus"
    MINUS = "minus"


class ApproximationParams(BaseModel):
    """Δ, A and the evaluation grid of a smoothed-indicator construction"""
    model_config = ConfigDict(frozen=True)

    delta: float = Field(ge=3.0)
    A: float = Field(ge=3.0)
    nu: int = Field(default=16, ge=1, le=MAX_DEGREE)
    grid_step: Optional[float] = Field(default=None, gt=0.0)
    kernel: KernelShape = KernelShape.JACKSON

    @property
    def bandwidth(self) -> float:
        return self.delta ** (2.0 * self.A)

    @property
    def target(self) -> Tuple[float, float]:
        return 0.0, 1.0 / self.delta

    def support(self, sign: IndicatorSign) -> Tuple[float, float]:
        d, a = self.delta, self.A
        if IndicatorSign(sign) is IndicatorSign.MINUS:
            return d ** (-a / 2) - d ** (-a), 1.0 / d - d ** (-a / 2) + d ** (-a)
        return -d ** (-a), 1.0 / d + d ** (-a)

    def key_points(self) -> np.ndarray:
        d, a = self.delta, self.A
        pts = [0.0, 1.0 / d, -d ** (-a / 2), 1.0 / d + d ** (-a / 2), d ** (-a / 2), 1.0 / d - d ** (-a / 2),
               0.5 / d]
        for sign in IndicatorSign:
            pts.extend(self.support(sign))
        return np.array(pts)

    def grid(self) -> np.ndarray:
        """Points covering [-Δ^{-A/2} - 1, Δ^{-1} + Δ^{-A/2} + 1], with the interval edges included"""
        lo = -self.delta ** (-self.A / 2) - 1.0
        hi = 1.0 / self.delta + self.delta ** (-self.A / 2) + 1.0
        step = self.grid_step or 0.25 / self.bandwidth
        n = int(math.ceil((hi - lo) / step)) + 1
        if n > get_settings().max_grid_points:
            raise ResourceLimitError(f"mollifier grid needs {n} points, above max_grid_points")
        return np.unique(np.concatenate([np.linspace(lo, hi, n), self.key_points()]))


def identity_profile(x, shape: KernelShape = KernelShape.FEJER) -> np.ndarray:
    """F0 with F0(0) = 1; F0(x) = sinc(x)^2 for FEJER, whose transform is supported in [-1, 1]"""
    kernel = get_kernel(shape)
    return kernel.value(x) / float(kernel.value(0.0))


def approximate_identity(x, shape: KernelShape = KernelShape.FEJER) -> np.ndarray:
    """F = F0/‖F0‖_1"""
    return get_kernel(shape).value(x)


def fourier_transform_numeric(fn: Callable[[np.ndarray], np.ndarray], u, lo: float, hi: float,
                              width: float, nodes: int = 16) -> np.ndarray:
    """∫_lo^hi fn(x) e^{-2πiux} dx by composite Gauss-Legendre, for each frequency in u"""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    xs, ws = panel_rule(uniform_edges(lo, hi, width), nodes)
    total = np.zeros(u.shape, dtype=complex)
    for start in range(0, xs.size, _BATCH):
        x = xs[start: start + _BATCH]
        fw = fn(x) * ws[start: start + _BATCH]
        total += np.exp(-2j * np.pi * np.outer(u, x)) @ fw
    return total


@dataclass(frozen=True, eq=False)
class SmoothedIndicator:
    """G^± for one sign; evaluation and transform are closed form"""
    sign: IndicatorSign
    params: ApproximationParams
    lo: float
    hi: float
    kernel: Kernel = field(repr=False)

    @property
    def bandwidth(self) -> float:
        return self.params.bandwidth

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        B = self.bandwidth
        left = self.kernel.cdf(B * (x - self.lo)) - self.kernel.cdf(B * (x - self.hi))
        right = self.kernel.cdf(B * (self.hi - x)) - self.kernel.cdf(B * (self.lo - x))
        return np.where(x < 0.5 * (self.lo + self.hi), left, right)

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        B = self.bandwidth
        return B * (self.kernel.value(B * (x - self.lo)) - self.kernel.value(B * (x - self.hi)))

    def hat(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        L = self.length
        phase = np.exp(-1j * np.pi * xi * (self.lo + self.hi))
        return self.kernel.hat(xi / self.bandwidth) * L * phase * np.sinc(xi * L)

    def fourier_table(self, points: int = 4097) -> Tuple[np.ndarray, np.ndarray]:
        xi = np.linspace(-self.bandwidth, self.bandwidth, points)
        return xi, self.hat(xi)

    def table(self, points: Optional[np.ndarray] = None, threads: int = 1) -> Tuple[np.ndarray, np.ndarray]:
        """G on the parameter grid, evaluated over grid chunks"""
        xs = self.params.grid() if points is None else np.asarray(points, dtype=float)
        chunks = [(xs[i: i + _BATCH],) for i in range(0, xs.size, _BATCH)]
        parts = map_chunks(self.__call__, chunks, threads)
        return xs, np.concatenate(parts) if parts else np.empty(0)

    def _frequency_edges(self) -> np.ndarray:
        """Panels in v = ξ/B with a boundary at every zero of sinc(BvL) and every kernel knot"""
        B, L = self.bandwidth, self.length
        spacing = 1.0 / (B * L)
        zeros = np.arange(-math.floor(1.0 / spacing), math.floor(1.0 / spacing) + 1) * spacing
        width = min(spacing, 1.0 / (B * max(abs(self.lo + self.hi), 1e-12)))
        edges = uniform_edges(-1.0, 1.0, width, breakpoints=tuple(zeros) + tuple(self.kernel.hat_knots))
        return edges

    def l1_fourier_norm(self) -> float:
        """∫|G_hat|"""
        B = self.bandwidth
        return float(B * integrate(lambda v: np.abs(self.hat(B * v)), self._frequency_edges(), n=16))

    def scaled_moments(self, nu: int) -> np.ndarray:
        """μ_ℓ = ∫ v^ℓ G_hat(Bv) dv for ℓ = 0..nu, so that ∫ ξ^ℓ G_hat = B^{ℓ+1} μ_ℓ"""
        v, w = panel_rule(self._frequency_edges(), 32)
        g = self.hat(self.bandwidth * v) * w
        powers = np.ones_like(v)
        out = np.empty(nu + 1, dtype=complex)
        for ell in range(nu + 1):
            out[ell] = np.sum(powers * g)
            powers = powers * v
        return out

    def fourier_leak(self, factor: float = LEAK_FACTOR, window: float = LEAK_WINDOW) -> float:
        """|numeric G_hat(±factor·B)| relative to ‖G_hat‖_1, by quadrature in x"""
        B = self.bandwidth
        lo = self.lo - window / B
        hi = self.hi + window / B
        values = fourier_transform_numeric(self.__call__, [-factor * B, factor * B], lo, hi, width=0.5 / B)
        return float(np.max(np.abs(values)) / self.l1_fourier_norm())

    def convolution_check(self, points: Sequence[float], tol: float = CERTIFY_TOLERANCE) -> float:
        """
        Compare the closed form with ∫_I B F(B(x - t)) dt by 16- and 32-node panels

        Raises:
            QuadratureError: If the two rules disagree by more than tol
        """
        B = self.bandwidth
        edges = uniform_edges(self.lo, self.hi, 0.25 / B)
        worst = 0.0
        for x in points:
            fn = lambda t, x=x: B * self.kernel.value(B * (x - t))
            coarse = integrate(fn, edges, n=16)
            fine = integrate(fn, edges, n=32)
            if abs(fine - coarse) > tol:
                raise QuadratureError(f"convolution quadrature at x = {x} did not settle", achieved=abs(fine - coarse))
            worst = max(worst, abs(fine - float(self(x))))
        return worst


def build_smoothed_indicator(params: ApproximationParams, sign: IndicatorSign) -> SmoothedIndicator:
    lo, hi = params.support(sign)
    return SmoothedIndicator(sign=IndicatorSign(sign), params=params, lo=lo, hi=hi, kernel=get_kernel(params.kernel))


def _horner(coefficients: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.zeros(np.shape(y), dtype=complex)
    for c in coefficients[::-1]:
        out = out * y + c
    return out


@dataclass(frozen=True, eq=False)
class PolynomialTruncation:
    """
    D(x) = Σ_{ℓ<=ν} d_ℓ (Bx)^ℓ with d_ℓ = (2πi)^ℓ/ℓ! · B · μ_ℓ
    """
    sign: IndicatorSign
    nu: int
    bandwidth: float
    scaled_moments: np.ndarray
    scaled_coefficients: np.ndarray
    log_coefficient_margin: np.ndarray
    window: float
    gap: float
    moment_check: float
    flags: List[str] = field(default_factory=list)

    @property
    def coefficients(self) -> np.ndarray:
        """c_ℓ = (2πi)^ℓ/ℓ! ∫ ξ^ℓ G_hat(ξ) dξ"""
        powers = self.bandwidth ** np.arange(self.nu + 1, dtype=float)
        with np.errstate(over="ignore"):
            return self.scaled_coefficients * powers

    def __call__(self, x) -> np.ndarray:
        return _horner(self.scaled_coefficients, self.bandwidth * np.asarray(x, dtype=float))


def _moment_discrepancy(ind: SmoothedIndicator, mu: np.ndarray) -> float:
    """Scaled moments ℓ <= 2 against finite differences of G at 0"""
    B = ind.bandwidth
    h1, h2 = 1e-3 / B, 1e-3 / B
    direct = [complex(ind(0.0)),
              (float(ind(h1)) - float(ind(-h1))) / (2 * h1) / (2j * np.pi),
              (float(ind.derivative(h2)) - float(ind.derivative(-h2))) / (2 * h2) / (2j * np.pi) ** 2]
    worst = 0.0
    for ell in range(min(mu.size, 3)):
        fd = direct[ell] / B ** (ell + 1)
        worst = max(worst, abs(fd - mu[ell]) / max(abs(mu[ell]), _FD_FLOOR))
    return worst


def truncate_to_polynomial(ind: SmoothedIndicator, nu: int, x_window: float = 0.5,
                           points: int = 2001) -> PolynomialTruncation:
    """
    Degree-nu Taylor truncation of G with its measured sup gap on |x| <= x_window

    A gap above 1 means the window is too wide for the degree; it is flagged,
    not raised.

    Raises:
        DomainError: If nu is outside [0, 60]
    """
    if not 0 <= nu <= MAX_DEGREE:
        raise DomainError(f"nu must lie in [0, {MAX_DEGREE}], got {nu}")
    B = ind.bandwidth
    mu = ind.scaled_moments(nu)
    ells = np.arange(nu + 1)
    log_fact = np.array([math.lgamma(k + 1.0) for k in ells])
    scale = np.exp(ells * math.log(2 * math.pi) - log_fact) * (1j ** ells)
    d = scale * B * mu

    with np.errstate(divide="ignore"):
        margin = math.log(2.0) - np.log(np.abs(mu))

    gap = _measured_gap(d, ind, x_window, points)
    flags = []
    if gap > 1.0:
        flags.append("window_too_wide")
    check = _moment_discrepancy(ind, mu)
    if check > 1e-4:
        flags.append("moment_check_failed")
    if np.any(margin < 0):
        flags.append("coefficient_bound_violated")
    return PolynomialTruncation(sign=ind.sign, nu=nu, bandwidth=B, scaled_moments=mu, scaled_coefficients=d,
                                log_coefficient_margin=margin, window=x_window, gap=gap, moment_check=check,
                                flags=flags)


def truncation_bound_log(delta: float, A: float, nu: float, x_window: Optional[float] = None) -> float:
    """
    Log of the truncation error bound

    Without a window this is log((10^ν/ν!) Δ^{9Aν}), the form valid for
    |x| <= Δ^{6A}; with a window W it is log((2πW)^ν/ν! · 2Δ^{2A(ν+1)}).
    """
    log_delta = math.log(delta)
    if x_window is None:
        return nu * math.log(10.0) - math.lgamma(nu + 1.0) + 9.0 * A * nu * log_delta
    return (nu * math.log(2 * math.pi) + nu * math.log(x_window) - math.lgamma(nu + 1.0)
            + math.log(2.0) + 2.0 * A * (nu + 1.0) * log_delta)


def tail_bound_log(bandwidth: float, nu: int, x_window: float, l1_norm: Optional[float] = None) -> float:
    """
    Log of Σ_{ℓ>ν} (2πW)^ℓ/ℓ! · B^ℓ ‖G_hat‖_1 <= ‖G_hat‖_1 z^{ν+1}/(ν+1)! e^z, z = 2πBW
    """
    z = 2 * math.pi * bandwidth * x_window
    norm = l1_norm if l1_norm is not None else 2.0 * bandwidth
    return math.log(norm) + (nu + 1) * math.log(z) - math.lgamma(nu + 2.0) + z


def certified_window(bandwidth: float, nu: int, tol: float = CERTIFY_TOLERANCE,
                     l1_norm: Optional[float] = None) -> float:
    """Largest W (to bisection accuracy) whose tail bound is <= tol"""
    target = math.log(tol)
    lo, hi = -200.0, 0.0
    while tail_bound_log(bandwidth, nu, math.exp(hi), l1_norm) <= target:
        hi += 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if tail_bound_log(bandwidth, nu, math.exp(mid), l1_norm) <= target:
            lo = mid
        else:
            hi = mid
    return math.exp(lo)


class SandwichSlack(BaseModel):
    eps_plus: float
    eps_minus: float
    log_constant_plus: float
    log_constant_minus: float


class TruncationEntry(BaseModel):
    sign: IndicatorSign
    nu: int
    min_log_coefficient_margin: float
    certified_window: float
    gap_certified: float
    half_window: float
    gap_half_window: float
    moment_check: float
    flags: List[str] = Field(default_factory=list)


class MollifierCertificate(BaseModel):
    delta: float
    A: float
    kernel: KernelShape
    bandwidth: float
    tolerance: float
    grid_points: int
    fourier_leak: Dict[str, float]
    item1_holds: bool
    item2_violation: float
    item2_holds: bool
    item3: SandwichSlack
    item4: SandwichSlack
    l1_fourier: Dict[str, float]
    l1_margin: float
    item5_holds: bool
    midpoint_plus: float
    convolution_error: float
    truncations: List[TruncationEntry]
    gap_monotone: bool
    nominal_degree_log_bound: float
    nominal_degree_holds: bool
    flags: List[str] = Field(default_factory=list)


def _log_constant(eps: float, delta: float, A: float) -> float:
    """log C with eps = C e^{-Δ^{A-1}}"""
    return math.log(eps) + delta ** (A - 1.0) if eps > 0 else -math.inf


def _slack(eps_plus: float, eps_minus: float, params: ApproximationParams) -> SandwichSlack:
    return SandwichSlack(eps_plus=eps_plus, eps_minus=eps_minus,
                         log_constant_plus=_log_constant(eps_plus, params.delta, params.A),
                         log_constant_minus=_log_constant(eps_minus, params.delta, params.A))


def _max_or_zero(values: np.ndarray) -> float:
    return float(max(np.max(values), 0.0)) if values.size else 0.0


def _measured_gap(trunc_d: np.ndarray, ind: SmoothedIndicator, window: float, points: int = 401) -> float:
    xs = np.unique(np.concatenate([np.linspace(-window, window, points), [0.0]]))
    with np.errstate(over="ignore", invalid="ignore"):
        gap = float(np.max(np.abs(_horner(trunc_d, ind.bandwidth * xs) - ind(xs))))
    return gap if math.isfinite(gap) else math.inf


def certify(params: ApproximationParams, nus: Sequence[int] = (4, 8, 16, 32), threads: int = 1,
            tol: float = CERTIFY_TOLERANCE, half_window: float = 0.5) -> MollifierCertificate:
    """
    Measure every sandwich property of G^± and the truncations D^± for each nu

    Returns:
        The certificate; failed properties are reported, not raised
    """
    d, a = params.delta, params.A
    plus = build_smoothed_indicator(params, IndicatorSign.PLUS)
    minus = build_smoothed_indicator(params, IndicatorSign.MINUS)
    xs, gp = plus.table(threads=threads)
    _, gm = minus.table(xs, threads=threads)
    logger.info("mollifier_tables", delta=d, A=a, points=xs.size)

    violation = max(_max_or_zero(-gm), _max_or_zero(gm - gp), _max_or_zero(gp - 1.0))
    inside = (xs >= 0.0) & (xs <= 1.0 / d)
    wide = (xs >= -d ** (-a / 2)) & (xs <= 1.0 / d + d ** (-a / 2))
    narrow = (xs >= d ** (-a / 2)) & (xs <= 1.0 / d - d ** (-a / 2))
    item3 = _slack(_max_or_zero(1.0 / gp[inside] - 1.0), _max_or_zero(gm - inside), params)
    item4 = _slack(_max_or_zero(gp - wide), _max_or_zero(1.0 - gm[narrow]), params)

    leak = {s.sign.value: s.fourier_leak() for s in (plus, minus)}
    norms = {s.sign.value: s.l1_fourier_norm() for s in (plus, minus)}
    bound = 2.0 * params.bandwidth
    conv = max(s.convolution_check(params.key_points()) for s in (plus, minus))

    flags = []
    entries = []
    gaps_on_common = {IndicatorSign.PLUS: [], IndicatorSign.MINUS: []}
    common = certified_window(params.bandwidth, min(nus), tol) if nus else 0.0
    for nu in nus:
        for ind in (plus, minus):
            trunc = truncate_to_polynomial(ind, nu, x_window=half_window)
            window = certified_window(params.bandwidth, nu, tol, l1_norm=norms[ind.sign.value])
            entries.append(TruncationEntry(
                sign=ind.sign, nu=nu,
                min_log_coefficient_margin=float(np.min(trunc.log_coefficient_margin)),
                certified_window=window,
                gap_certified=_measured_gap(trunc.scaled_coefficients, ind, window),
                half_window=half_window,
                gap_half_window=trunc.gap,
                moment_check=trunc.moment_check,
                flags=trunc.flags,
            ))
            gaps_on_common[ind.sign].append(_measured_gap(trunc.scaled_coefficients, ind, common))

    monotone = all(later <= earlier + 1e-12
                   for gaps in gaps_on_common.values() for earlier, later in zip(gaps, gaps[1:]))
    if not monotone:
        flags.append("gap_not_monotone")
    nominal = truncation_bound_log(d, a, d ** (10.0 * a))
    if nominal > -d ** a:
        flags.append("nominal_degree_bound_above_target")

    cert = MollifierCertificate(
        delta=d, A=a, kernel=params.kernel, bandwidth=params.bandwidth, tolerance=tol, grid_points=int(xs.size),
        fourier_leak=leak, item1_holds=max(leak.values()) < SANDWICH_TOLERANCE,
        item2_violation=violation, item2_holds=violation <= SANDWICH_TOLERANCE,
        item3=item3, item4=item4,
        l1_fourier={**norms, "bound": bound}, l1_margin=bound - max(norms.values()),
        item5_holds=max(norms.values()) <= bound,
        midpoint_plus=float(plus(0.5 / d)), convolution_error=conv,
        truncations=entries, gap_monotone=monotone,
        nominal_degree_log_bound=nominal, nominal_degree_holds=nominal <= -d ** a,
        flags=flags,
    )
    logger.info("mollifier_certified", delta=d, A=a, item2_violation=violation, gap_monotone=monotone)
    return cert
