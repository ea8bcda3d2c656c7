"""Choosing thresholds and skip rates to meet false-alarm and duty-cycle constraints."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional


from qcdlab.detectors import DECuSum, DEShiryaev, NO_TRUNCATION, Policy
from qcdlab.distributions import DistributionPair
from qcdlab.metrics import MetricEstimate, estimate_bayes, estimate_far, estimate_pdc
from qcdlab.renewal import CycleStats, estimate_cycle_stats, sojourn_lengths, truncate

log = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 0.05
DEFAULT_BUDGET = 20
#: beta at or above this, with h > 0, may exceed the reachable duty cycle
HIGH_BETA = 0.95


class InfeasibleDesignError(ValueError):
    """The requested duty cycle cannot be reached with the given truncation."""


@dataclass(frozen=True)
class DesignSpec:
    alpha: float
    beta: float
    h: float = NO_TRUNCATION

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.h >= 0:
            raise ValueError(f"h must be >= 0, got {self.h}")
        if self.beta >= HIGH_BETA and self.beta < 1.0 and self.h > 0:
            warnings.warn(
                f"beta={self.beta} is close to 1; with h > 0 the duty cycle stays strictly below 1 "
                "and may not reach this value",
                stacklevel=2,
            )


def threshold_for_far(alpha: float) -> float:
    """Threshold ``log(1/alpha)``, which keeps the CuSum false-alarm rate below ``alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return math.log(1.0 / alpha)


def mu_star(stats: CycleStats, beta: float) -> float:
    """Conservative skip rate guaranteeing duty cycle ``<= beta`` for every threshold."""
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    if beta == 1.0:
        return math.inf
    return stats.mean_abs_trunc_LLR_neg * stats.p_neg_inf**2 / stats.mean_lambda_inf * beta / (1.0 - beta)


def pdc_approx(stats: CycleStats, mu: float) -> float:
    """Duty-cycle approximation from ``D = inf`` cycles, keeping the ceiling in the sojourn."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    soj = float(sojourn_lengths(truncate(stats.terminal_sample, stats.h), mu).mean())
    return stats.mean_lambda_inf / (stats.mean_lambda_inf + soj)


def pdc_approx_hinf(pair: DistributionPair, mu: float) -> float:
    """Closed-form duty-cycle approximation for untruncated DE-CuSum."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    return mu / (mu + pair.kl_f0_f1)


def mu_for_pdc_hinf(pair: DistributionPair, beta: float) -> float:
    """Inverse of :func:`pdc_approx_hinf`."""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    return beta / (1.0 - beta) * pair.kl_f0_f1


def pdc_ceiling(stats: CycleStats) -> float:
    """Largest duty cycle reachable with ``h > 0``: every undershoot costs at least one skipped slot."""
    if stats.h == 0:
        return 1.0
    return stats.mean_lambda_inf / (stats.mean_lambda_inf + stats.p_neg_inf)


@dataclass
class Probe:
    x: float
    estimate: MetricEstimate


@dataclass
class CalibrationResult:
    value: float
    estimate: Optional[MetricEstimate]
    probes: list[Probe] = field(default_factory=list)
    converged: bool = True
    seed: int = 0


def calibrate_threshold(
    factory: Callable[[float], Policy],
    pair: DistributionPair,
    alpha: float,
    tolerance: float = DEFAULT_TOLERANCE,
    budget: int = DEFAULT_BUDGET,
    *,
    n_trials: int = 10_000,
    seed: int = 0,
    threads: int = 1,
    cap: int = 10_000_000,
) -> CalibrationResult:
    """Smallest threshold whose estimated FAR is within ``alpha * (1 + tolerance)``.

    ``factory`` maps a threshold D to a policy. Probes use common random
    numbers, so FAR as a function of D is deterministic and (up to noise)
    monotone. The search starts at ``log(1/alpha)``. If that is far inside
    the constraint the lower end is halved (from ``0.5 log(1/alpha)``) until
    it becomes infeasible; if it violates the constraint the bracket is
    ``[log(1/alpha), log(1/alpha) + 2]``. Bisection then stops once a probe
    lands in ``[alpha (1 - tolerance), alpha (1 + tolerance)]``.

    If the budget runs out first, ``log(1/alpha)`` is returned with a warning.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    L = threshold_for_far(alpha)
    target_hi = alpha * (1.0 + tolerance)
    target_lo = alpha * (1.0 - tolerance)
    probes: list[Probe] = []

    def probe(D: float) -> MetricEstimate:
        est = estimate_far(factory(D), pair, n_trials, cap, seed=seed, threads=threads)
        probes.append(Probe(D, est))
        log.debug("FAR probe D=%.5f -> %.5g", D, est.value)
        return est

    first = probe(L)
    if first.value <= target_lo:
        # log(1/alpha) is conservative; walk the lower end down until infeasible
        hi, lo = L, 0.5 * L
        while len(probes) < budget:
            est = probe(lo)
            if est.value > target_hi:
                break
            if est.value >= target_lo:
                return CalibrationResult(lo, est, probes, True, seed)
            hi, lo = lo, 0.5 * lo
    elif first.value <= target_hi:
        return CalibrationResult(L, first, probes, True, seed)
    else:
        lo, hi = L, L + 2.0
    while len(probes) < budget:
        mid = 0.5 * (lo + hi)
        est = probe(mid)
        if est.value <= target_hi:
            if est.value >= target_lo:
                return CalibrationResult(mid, est, probes, True, seed)
            hi = mid
        else:
            lo = mid
    warnings.warn(
        f"threshold calibration did not meet FAR={alpha} within {budget} probes; using log(1/alpha)",
        stacklevel=2,
    )
    return CalibrationResult(L, first, probes, False, seed)


def calibrate_mu(
    pair: DistributionPair,
    h: float,
    D: float,
    beta: float,
    tolerance: float = DEFAULT_TOLERANCE,
    budget: int = DEFAULT_BUDGET,
    *,
    n_trials: int = 20_000,
    seed: int = 0,
    threads: int = 1,
    stats: Optional[CycleStats] = None,
    conditioning: Literal["path", "regenerative"] = "regenerative",
) -> CalibrationResult:
    """Skip rate ``mu`` with estimated duty cycle in ``[beta (1 - tolerance), beta]``.

    Duty cycle increases with ``mu``. The search starts from the
    untruncated closed-form guess, expands upward until the duty cycle
    exceeds ``beta``, then bisects.

    Raises:
        InfeasibleDesignError: If ``beta`` is at or above the truncation
            ceiling, or no probe within the budget reaches the band.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    if beta == 1.0:
        return CalibrationResult(math.inf, None, [], True, seed)
    if h != NO_TRUNCATION and h > 0:
        if stats is None or stats.h != h:
            stats = estimate_cycle_stats(pair, h, 20_000, seed)
        ceiling = pdc_ceiling(stats)
        if beta >= ceiling:
            raise InfeasibleDesignError(f"beta={beta} is not below the reachable duty cycle {ceiling:.4f} for h={h}")
    elif h == 0:
        raise InfeasibleDesignError("with h = 0 the detector never skips; duty cycle is 1")

    probes: list[Probe] = []

    def probe(mu: float) -> MetricEstimate:
        est = estimate_pdc(DECuSum(D, mu, h), pair, trials_per_point=n_trials, seed=seed,
                           threads=threads, conditioning=conditioning)
        probes.append(Probe(mu, est))
        log.debug("PDC probe mu=%.5g -> %.5f", mu, est.value)
        return est

    lo_band = beta * (1.0 - tolerance)

    def done(est: MetricEstimate) -> bool:
        return lo_band <= est.value <= beta

    mu = mu_for_pdc_hinf(pair, beta)
    lo, hi = 0.0, None
    while len(probes) < budget:
        est = probe(mu)
        if done(est):
            return CalibrationResult(mu, est, probes, True, seed)
        if est.value > beta:
            hi = mu
        else:
            lo = mu
        mu = 2.0 * mu if hi is None else 0.5 * (lo + hi)
    raise InfeasibleDesignError(f"no mu within {budget} probes gave duty cycle in [{lo_band:.4f}, {beta}]")


def calibrate_lower_threshold(
    pair: DistributionPair,
    A: float,
    rho: float,
    target_ano: float,
    tolerance: float = DEFAULT_TOLERANCE,
    budget: int = DEFAULT_BUDGET,
    *,
    n_trials: int = 10_000,
    seed: int = 0,
    threads: int = 1,
) -> CalibrationResult:
    """Skip threshold B of DE-Shiryaev giving a pre-change observation count near ``target_ano``.

    The count decreases as B grows; bisection runs on the log-odds scale of B.
    """
    probes: list[Probe] = []

    def probe(B: float) -> MetricEstimate:
        est = estimate_bayes(DEShiryaev(A, rho, B), pair, rho, n_trials, seed=seed, threads=threads).ano
        probes.append(Probe(B, est))
        return est

    full = probe(0.0)
    if full.value <= target_ano * (1.0 + tolerance):
        return CalibrationResult(0.0, full, probes, True, seed)
    lo, hi = math.log(1e-8) - math.log1p(-1e-8), math.log(A) - math.log1p(-A)
    best: Optional[tuple[float, MetricEstimate]] = None
    while len(probes) < budget:
        mid = 0.5 * (lo + hi)
        B = 1.0 / (1.0 + math.exp(-mid))
        est = probe(B)
        if abs(est.value - target_ano) <= tolerance * target_ano:
            return CalibrationResult(B, est, probes, True, seed)
        if best is None or abs(est.value - target_ano) < abs(best[1].value - target_ano):
            best = (B, est)
        if est.value > target_ano:
            lo = mid
        else:
            hi = mid
    warnings.warn(f"lower-threshold calibration did not reach ANO={target_ano} within {budget} probes", stacklevel=2)
    return CalibrationResult(best[0], best[1], probes, False, seed)
