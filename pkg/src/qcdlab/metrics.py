"""Monte Carlo estimates of false-alarm, delay and duty-cycle metrics, with standard errors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from qcdlab.detectors import (
    DEFAULT_CAP,
    CuSum,
    DECuSum,
    FractionalSampling,
    Policy,
    Shiryaev,
)
from qcdlab.distributions import Deterministic, DistributionPair, Geometric
from qcdlab.engine import BatchResult, simulate
from qcdlab.renewal import sojourn_length
from qcdlab.rng import derive_seed

#: reliability flags
CENSORED = "censored"
LOW_ACCEPTANCE = "low_acceptance"
NOT_CONVERGED = "not_converged"

MAX_CENSORED_FRACTION = 0.01
MIN_ACCEPTANCE = 0.10
DEFAULT_PDC_GRID = tuple(range(100, 1001, 100))


@dataclass
class MetricEstimate:
    metric: str
    value: float
    std_error: float
    n_trials: int
    censored_fraction: float = 0.0
    flags: list[str] = field(default_factory=list)
    extra: dict[str, object] = field(default_factory=dict)

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.value - 1.96 * self.std_error, self.value + 1.96 * self.std_error)

    @property
    def reliable(self) -> bool:
        return not self.flags

    def to_record(self, config_hash: str | None = None) -> dict:
        return {
            "metric": self.metric,
            "value": self.value,
            "std_error": self.std_error,
            "n_trials": self.n_trials,
            "ci95": list(self.ci95),
            "censored_fraction": self.censored_fraction,
            "flags": list(self.flags),
            "config_hash": config_hash,
        }


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    if x.size == 1:
        return float(x[0]), math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def _censor_flags(res: BatchResult) -> tuple[float, list[str]]:
    frac = float(res.censored.mean())
    return frac, ([CENSORED] if frac > MAX_CENSORED_FRACTION else [])


def estimate_far(
    policy: Policy,
    pair: DistributionPair,
    n_trials: int,
    cap: int = DEFAULT_CAP,
    *,
    seed: int = 0,
    threads: int = 1,
) -> MetricEstimate:
    """``1 / E_inf[tau]`` from ``n_trials`` pre-change runs.

    Censored runs count as stopping at the cap, which biases the FAR
    estimate downward; more than 1% censoring flags the estimate.
    """
    res = simulate(policy, pair, Deterministic(math.inf), n_trials, seed, cap=cap, threads=threads)
    m, se_m = _mean_se(res.tau)
    frac, flags = _censor_flags(res)
    return MetricEstimate(
        metric="FAR",
        value=1.0 / m,
        std_error=se_m / m**2 if math.isfinite(se_m) else math.nan,
        n_trials=n_trials,
        censored_fraction=frac,
        flags=flags,
        extra={"mean_tau": m, "se_mean_tau": se_m},
    )


@dataclass
class CaddPoint:
    n: int
    value: float
    std_error: float
    acceptance: float


@dataclass
class CaddProfile:
    per_n: list[CaddPoint]
    flags: list[str] = field(default_factory=list)

    @property
    def argmax_n(self) -> int:
        return max(self.per_n, key=lambda p: p.value).n

    @property
    def sup(self) -> CaddPoint:
        return max(self.per_n, key=lambda p: p.value)

    @property
    def sup_value(self) -> float:
        return self.sup.value

    def as_estimate(self) -> MetricEstimate:
        s = self.sup
        return MetricEstimate("CADD", s.value, s.std_error, 0, flags=list(self.flags), extra={"argmax_n": s.n})


def estimate_cadd(
    policy: Policy,
    pair: DistributionPair,
    n_max: int = 20,
    trials_per_n: int = 10_000,
    cap: int = DEFAULT_CAP,
    *,
    seed: int = 0,
    threads: int = 1,
) -> CaddProfile:
    """Conditional delay ``E_n[tau - n | tau >= n]`` for ``n = 1..n_max`` and its supremum.

    Each change time uses its own derived seed, shared across policies, so
    two detectors evaluated with the same ``seed`` see common random numbers.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    points: list[CaddPoint] = []
    flags: set[str] = set()
    for n in range(1, n_max + 1):
        res = simulate(policy, pair, Deterministic(n), trials_per_n, derive_seed(seed, n), cap=cap, threads=threads)
        acc = res.tau >= n
        rate = float(acc.mean())
        if rate < MIN_ACCEPTANCE:
            flags.add(LOW_ACCEPTANCE)
        if res.censored[acc].any():
            flags.add(CENSORED)
        v, se = _mean_se(res.tau[acc] - n)
        points.append(CaddPoint(n, v, se, rate))
    return CaddProfile(points, sorted(flags))


def estimate_delay(
    policy: Policy,
    pair: DistributionPair,
    n_trials: int,
    cap: int = DEFAULT_CAP,
    *,
    seed: int = 0,
    threads: int = 1,
) -> MetricEstimate:
    """``E_1[tau]``: mean stopping time when the change is present from the first sample."""
    res = simulate(policy, pair, Deterministic(1), n_trials, seed, cap=cap, threads=threads)
    v, se = _mean_se(res.tau)
    frac, flags = _censor_flags(res)
    return MetricEstimate("E1_tau", v, se, n_trials, frac, flags)


def estimate_wadd_decusum(
    policy: DECuSum,
    pair: DistributionPair,
    n_trials: int,
    cap: int = DEFAULT_CAP,
    *,
    seed: int = 0,
    threads: int = 1,
) -> MetricEstimate:
    """Worst-case delay of truncated DE-CuSum: longest possible skip run plus ``E_1[tau]``."""
    if not isinstance(policy, DECuSum):
        raise TypeError("estimate_wadd_decusum needs a DECuSum policy")
    if not policy.truncates:
        raise ValueError("WADD of DE-CuSum is infinite without truncation (h = inf)")
    d = estimate_delay(policy, pair, n_trials, cap, seed=seed, threads=threads)
    offset = sojourn_length(-policy.h, policy.mu)
    return MetricEstimate("WADD", offset + d.value, d.std_error, n_trials, d.censored_fraction, d.flags,
                          extra={"skip_offset": offset, "E1_tau": d.value})


def estimate_wadd_cusum(
    policy: CuSum,
    pair: DistributionPair,
    n_trials: int,
    cap: int = DEFAULT_CAP,
    *,
    seed: int = 0,
    threads: int = 1,
) -> MetricEstimate:
    """CuSum worst-case delay ``E_1[tau - 1]`` (the worst case is a change at time 1)."""
    d = estimate_delay(policy, pair, n_trials, cap, seed=seed, threads=threads)
    return MetricEstimate("WADD", d.value - 1.0, d.std_error, n_trials, d.censored_fraction, d.flags)


@dataclass
class PdcPoint:
    n: int
    value: float
    std_error: float
    acceptance: float


def estimate_pdc(
    policy: Policy,
    pair: DistributionPair,
    n_grid: Sequence[int] = DEFAULT_PDC_GRID,
    trials_per_point: int = 20_000,
    cap: int = DEFAULT_CAP,
    *,
    seed: int = 0,
    threads: int = 1,
    conditioning: Literal["path", "regenerative"] = "path",
) -> MetricEstimate:
    """Pre-change duty cycle ``E[sum_{k<n} M_k | tau >= n] / (n - 1)`` on a grid of horizons.

    ``conditioning="path"`` rejects trials that raised an alarm before ``n``.
    ``"regenerative"`` instead restarts any excursion that would raise an
    alarm from the last time the statistic sat at the origin, which conditions
    each excursion on returning below 0; this is usable even when almost no
    path survives to ``n``.

    The returned value is the last grid point; ``extra["profile"]`` holds the
    full grid. A difference between the last two grid points beyond three
    combined standard errors flags the estimate as not converged.
    """
    grid = [int(n) for n in n_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 2:
        raise ValueError("n_grid must be increasing with entries >= 2")
    if grid[-1] < 500:
        raise ValueError("the largest grid point must be >= 500")
    horizon_cap = min(cap, grid[-1] - 1) if conditioning == "path" else cap
    res = simulate(
        policy,
        pair,
        Deterministic(math.inf),
        trials_per_point,
        seed,
        cap=horizon_cap,
        checkpoints=[n - 1 for n in grid],
        mode=conditioning,
        threads=threads,
    )
    points: list[PdcPoint] = []
    flags: set[str] = set()
    for k, n in enumerate(grid):
        acc = res.ck_alive[:, k]
        rate = float(acc.mean())
        if rate < MIN_ACCEPTANCE:
            flags.add(LOW_ACCEPTANCE)
        # n - 1 slots precede the horizon; normalising by them keeps always-on detectors at exactly 1
        v, se = _mean_se(res.ck_obs[acc, k] / (n - 1))
        points.append(PdcPoint(n, v, se, rate))
    frac = float(res.censored.mean()) if conditioning == "regenerative" else 0.0
    if frac > 0:
        flags.add(CENSORED)
    last = points[-1]
    if len(points) >= 2:
        prev = points[-2]
        if abs(last.value - prev.value) > 3 * math.hypot(_nz(last.std_error), _nz(prev.std_error)):
            flags.add(NOT_CONVERGED)
    return MetricEstimate(
        metric="PDC",
        value=last.value,
        std_error=last.std_error,
        n_trials=trials_per_point,
        censored_fraction=frac,
        flags=sorted(flags),
        extra={"profile": points, "acceptance": last.acceptance, "conditioning": conditioning},
    )


def _nz(x: float) -> float:
    return 0.0 if not math.isfinite(x) else x


@dataclass
class BayesEstimates:
    add: MetricEstimate
    pfa: MetricEstimate
    ano: MetricEstimate


def _prior_rho(policy: Policy) -> Optional[float]:
    base = policy.base if isinstance(policy, FractionalSampling) else policy
    return base.rho if isinstance(base, Shiryaev) else None


def estimate_bayes(
    policy: Policy,
    pair: DistributionPair,
    rho: float,
    n_trials: int,
    cap: int = DEFAULT_CAP,
    *,
    seed: int = 0,
    threads: int = 1,
) -> BayesEstimates:
    """ADD, PFA and ANO with a geometric(``rho``) change point drawn per trial."""
    prior = _prior_rho(policy)
    if prior is None:
        raise TypeError("estimate_bayes needs a Shiryaev-family policy")
    if prior != rho:
        raise ValueError(f"policy prior rho={prior} does not match rho={rho}")
    res = simulate(policy, pair, Geometric(rho), n_trials, seed, cap=cap, threads=threads)
    frac, flags = _censor_flags(res)
    delay = np.maximum(res.tau - res.change_point, 0.0)
    false_alarm = (res.tau < res.change_point).astype(float)
    add = MetricEstimate("ADD", *_mean_se(delay), n_trials, frac, list(flags))
    pfa = MetricEstimate("PFA", *_mean_se(false_alarm), n_trials, frac, list(flags))
    ano = MetricEstimate("ANO", *_mean_se(res.obs_pre), n_trials, frac, list(flags))
    return BayesEstimates(add, pfa, ano)
