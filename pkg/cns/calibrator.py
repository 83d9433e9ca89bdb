"""Critical predictable time, Tc-N / Tc-K fits and (N, K) estimates.

Two trajectories that differ only in their scheme (order, precision or step
mode) agree to many digits at first; Tc is the last comparison-grid time at
which they still share the required number of significant digits.
"""
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from config import (
    COMPARISON_GRID,
    DIGITS_PAIR_INCREMENT,
    LARGE_DIGITS_FACTOR,
    LARGE_DIGITS_OFFSET,
    LARGE_ORDER_FACTOR,
    LARGE_ORDER_OFFSET,
    ORDER_PAIR_FRACTION,
    ORDER_PAIR_MIN_INCREMENT,
    REQUIRED_DIGITS,
)
from cns.errors import ConfigurationError, FitError, HorizonTooShortError
from cns.integrator import TrajectoryIntegrator
from cns.lorenz_taylor import LorenzState
from cns.mp_scalar import MPScalar
from cns.run_config import RunConfig

logger = logging.getLogger(__name__)

_LOG10_2 = math.log10(2.0)


@dataclass(frozen=True)
class AgreementCriterion:
    required_digits: int = REQUIRED_DIGITS
    grid: float = COMPARISON_GRID

    def __post_init__(self):
        if self.required_digits < 1:
            raise ConfigurationError("required digits must be >= 1")
        if not self.grid > 0:
            raise ConfigurationError("comparison grid spacing must be positive")


@dataclass(frozen=True)
class TcFit:
    slope: float
    intercept: float
    points: tuple[tuple[float, float], ...]
    residual: float  # root-mean-square deviation of the points from the line

    def predict(self, abscissa: float) -> float:
        return self.slope * abscissa + self.intercept

    def summary(self, name: str) -> str:
        return f"Tc = {self.slope:.4f} * {name} {self.intercept:+.4f}  (rms residual {self.residual:.4f}, {len(self.points)} points)"


@dataclass
class TcMeasurement:
    tc: float
    decoupled: bool
    first_failure: float | None = None
    agreement: list[tuple[float, int]] = field(default_factory=list)
    final_state: LorenzState | None = None  # first run at the horizon, when it got there


def _component_digits(a: Fraction, b: Fraction) -> int | None:
    """floor(-log10(|a-b| / max(|a|, |b|, 1))), or None when a == b."""
    diff = abs(a - b)
    if diff == 0:
        return None
    ratio = diff / max(abs(a), abs(b), Fraction(1))
    num, den = ratio.numerator, ratio.denominator
    # estimate from bit lengths, then settle exactly: m is the largest integer with ratio * 10^m <= 1
    m = int((den.bit_length() - num.bit_length()) * _LOG10_2)
    while _scaled(num, m) > den:
        m -= 1
    while _scaled(num, m + 1) <= den:
        m += 1
    return m


def _scaled(num: int, m: int) -> Fraction:
    return Fraction(num * 10**m) if m >= 0 else Fraction(num, 10**-m)


def digits_agreement(a: Sequence[MPScalar], b: Sequence[MPScalar], clamp: int | None = None) -> int:
    """Matching significant digits of two (x, y, z) triples, min over components.

    Uses a unit floor on the scale so that components crossing zero are not
    reported as decoupled. Clamped to the smaller available precision.
    """
    if clamp is None:
        clamp = min(v.ctx.decimal_digits for v in (*a, *b))
    digits = clamp
    for u, v in zip(a, b, strict=True):
        m = _component_digits(u.to_fraction(), v.to_fraction())
        if m is not None:
            digits = min(digits, m)
    return digits


def paired_order(order: int) -> int:
    """Order of the comparison run: N raised by the larger of the minimum increment and the fractional one."""
    return order + max(ORDER_PAIR_MIN_INCREMENT, math.ceil(ORDER_PAIR_FRACTION * order))


def paired_digits(digits: int) -> int:
    """Digits of the comparison run."""
    return digits + DIGITS_PAIR_INCREMENT


def large_order_for(digits: int) -> int:
    """An order whose truncation error stays below round-off at `digits`."""
    return math.ceil(LARGE_ORDER_FACTOR * digits) + LARGE_ORDER_OFFSET


def large_digits_for(order: int) -> int:
    """A precision whose round-off stays below truncation at `order`."""
    return math.ceil(LARGE_DIGITS_FACTOR * order) + LARGE_DIGITS_OFFSET


def compare_runs(
    cfg_a: RunConfig,
    cfg_b: RunConfig,
    crit: AgreementCriterion,
    stop_on_failure: bool = True,
) -> TcMeasurement:
    """Advance both runs in lockstep over the comparison grid."""
    if cfg_a.ic != cfg_b.ic or cfg_a.params != cfg_b.params:
        raise ConfigurationError("paired runs must share initial conditions and parameters")
    horizon = min(cfg_a.t_end, cfg_b.t_end)
    first = TrajectoryIntegrator(cfg_a.without_checkpoints().replace(output_every=crit.grid, t_end=horizon))
    second = TrajectoryIntegrator(cfg_b.without_checkpoints().replace(output_every=crit.grid, t_end=horizon))
    runs = first.iter_outputs(), second.iter_outputs()
    result = TcMeasurement(tc=0.0, decoupled=False)
    try:
        for rec_a, rec_b in zip(*runs):
            m = digits_agreement(rec_a.point, rec_b.point)
            t = float(rec_a.t)
            result.agreement.append((t, m))
            if m >= crit.required_digits:
                if result.first_failure is None:
                    result.tc = t
            elif result.first_failure is None:
                result.first_failure = t
                result.decoupled = True
                logger.info(f"[Calibrator] Decoupled at t={t:g} ({m} digits); Tc = {result.tc:g}")
                if stop_on_failure:
                    break
    finally:
        for run in runs:
            run.close()
    result.final_state = first.final
    if not result.decoupled:
        logger.warning(f"[Calibrator] Runs still agree at the horizon t={horizon:g}")
    return result


def measure_tc(cfg_a: RunConfig, cfg_b: RunConfig, crit: AgreementCriterion | None = None) -> TcMeasurement:
    """Last agreeing grid time; equals the horizon (decoupled=False) if they never part."""
    return compare_runs(cfg_a, cfg_b, crit or AgreementCriterion())


def fit_linear(points: Sequence[tuple[float, float]]) -> TcFit:
    """Ordinary least squares Tc = slope * abscissa + intercept."""
    pts = [(float(u), float(v)) for u, v in points]
    if len(pts) < 3:
        raise FitError(f"a fit needs at least 3 points, got {len(pts)}")
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if np.ptp(xs) == 0:
        raise FitError("all abscissae coincide")
    design = np.vstack([xs, np.ones_like(xs)]).T
    (slope, intercept), *_ = np.linalg.lstsq(design, ys, rcond=None)
    residual = float(np.sqrt(np.mean((design @ np.array([slope, intercept]) - ys) ** 2)))
    return TcFit(float(slope), float(intercept), tuple(pts), residual)


def _required(target: float, fit: TcFit, reserve: float, name: str) -> int:
    if fit.slope <= 0:
        raise FitError(f"Tc-{name} slope must be positive, got {fit.slope}")
    if target <= fit.intercept:
        raise FitError(f"target {target} is not above the Tc-{name} intercept {fit.intercept}")
    return math.ceil((1.0 + reserve) * (target - fit.intercept) / fit.slope)


def estimate_nk(t_target: float, fit_n: TcFit, fit_k: TcFit, reserve: float) -> tuple[int, int]:
    """(N, K) for a horizon t_target with a fractional reserve."""
    if not 0.0 <= reserve <= 0.5:
        raise ConfigurationError(f"reserve must lie in [0, 0.5], got {reserve}")
    return _required(t_target, fit_n, reserve, "N"), _required(t_target, fit_k, reserve, "K")


def _sweep(
    values: Sequence[int],
    make_pair: Callable[[int], tuple[RunConfig, RunConfig]],
    crit: AgreementCriterion,
    name: str,
    on_point: Callable[[int, TcMeasurement], None] | None,
) -> tuple[TcFit, list[TcMeasurement]]:
    measurements = []
    for value in values:
        cfg_a, cfg_b = make_pair(value)
        logger.info(
            f"[Calibrator] {name}={value}: N={cfg_a.order}/{cfg_b.order}, K={cfg_a.digits}/{cfg_b.digits}, {cfg_a.step.label}"
        )
        m = measure_tc(cfg_a, cfg_b, crit)
        if on_point is not None:
            on_point(value, m)
        if not m.decoupled:
            raise HorizonTooShortError(f"{name}={value} never decoupled before t={cfg_a.t_end}")
        measurements.append(m)
    fit = fit_linear([(v, m.tc) for v, m in zip(values, measurements)])
    logger.info(f"[Calibrator] {fit.summary(name)}")
    return fit, measurements


def calibrate_k(
    base: RunConfig,
    digits_list: Sequence[int],
    crit: AgreementCriterion | None = None,
    order: int | None = None,
    on_point: Callable[[int, TcMeasurement], None] | None = None,
) -> tuple[TcFit, list[TcMeasurement]]:
    """Tc-K: K against K+20 digits at a shared order large enough for the top K."""
    shared = order or large_order_for(paired_digits(max(digits_list)))

    def make_pair(k):
        return base.replace(order=shared, digits=k), base.replace(order=shared, digits=paired_digits(k))

    return _sweep(digits_list, make_pair, crit or AgreementCriterion(), "K", on_point)


def calibrate_n(
    base: RunConfig,
    orders: Sequence[int],
    crit: AgreementCriterion | None = None,
    digits: int | None = None,
    on_point: Callable[[int, TcMeasurement], None] | None = None,
) -> tuple[TcFit, list[TcMeasurement]]:
    """Tc-N: N against N + max(10, 10% N) at a shared precision large enough for the top N."""
    shared = digits or large_digits_for(paired_order(max(orders)))

    def make_pair(n):
        return base.replace(order=n, digits=shared), base.replace(order=paired_order(n), digits=shared)

    return _sweep(orders, make_pair, crit or AgreementCriterion(), "N", on_point)
