"""Two-sided test decomposition of DE-CuSum: SPRT cycles, skip sojourns, renewal bounds.

Starting from ``W = 0`` the DE-CuSum statistic runs a sequential probability
ratio test with boundaries 0 and D. A cycle ending below 0 at ``x`` is
followed by a deterministic skip sojourn of ``ceil(-max(x, -h) / mu)`` slots,
after which the statistic is back at 0 and a fresh, independent cycle begins.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from qcdlab.detectors import DEFAULT_CAP, NO_TRUNCATION, SKIP_SNAP
from qcdlab.distributions import DistributionPair, DomainError
from qcdlab.rng import CYCLE, derive_seed, make_rng

Regime = Literal["pre_change", "post_change"]

#: terminal values kept in CycleStats for ceiling-sensitive approximations
RESERVOIR = 100_000
MIN_ACCEPTED = 200


class CycleCensoredError(RuntimeError):
    """An SPRT cycle did not terminate within the step cap."""


class WaldConsistencyError(RuntimeError):
    """Cycle statistics violate Wald's identity; the LLR is probably wrong."""


class InsufficientDataError(RuntimeError):
    """Too few cycles satisfied the conditioning event."""


def sojourn_length(x: float, mu: float) -> int:
    """Number of skip slots needed for ``W' = min(W + mu, 0)`` to climb from ``x`` to 0.

    Equals ``ceil(-x / mu)``, counted exactly as the skip recursion counts
    it: a value within a relative ``1e-9`` of an integer step lands on 0.

    Raises:
        DomainError: If ``x > 0``.
    """
    if x > 0:
        raise DomainError(f"sojourn start must be <= 0, got {x}")
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if x == 0:
        return 0
    return max(math.ceil(-x / mu - SKIP_SNAP), 1)


def sojourn_lengths(x: np.ndarray, mu: float) -> np.ndarray:
    """Vectorised :func:`sojourn_length` (assumes ``x <= 0``)."""
    x = np.asarray(x, dtype=float)
    k = np.maximum(np.ceil(-x / mu - SKIP_SNAP), 1.0)
    return np.where(x == 0, 0.0, k)


def truncate(x, h: float):
    """``max(x, -h)``, with ``h = inf`` meaning no truncation."""
    if h == NO_TRUNCATION:
        return x
    return np.maximum(x, 0.0 if h == 0 else -h)


@dataclass(frozen=True)
class SprtCycleOutcome:
    lam: int
    terminal_W: float
    decision: Literal["crossed_D", "fell_below_0"]


def _regime_density(pair: DistributionPair, regime: Regime):
    if regime == "pre_change":
        return pair.f0
    if regime == "post_change":
        return pair.f1
    raise ValueError(f"unknown regime {regime!r}")


def simulate_sprt_cycle(
    pair: DistributionPair,
    D: float,
    regime: Regime,
    rng: np.random.Generator,
    cap: int = DEFAULT_CAP,
) -> SprtCycleOutcome:
    """Run one SPRT from 0 until the walk leaves ``[0, D]``; ``D = inf`` keeps only the lower boundary."""
    if not D > 0:
        raise ValueError(f"D must be positive, got {D}")
    f = _regime_density(pair, regime)
    w = 0.0
    for n in range(1, cap + 1):
        w += float(pair.llr(f.sample(rng)))
        if w < 0:
            return SprtCycleOutcome(n, w, "fell_below_0")
        if w > D:
            return SprtCycleOutcome(n, w, "crossed_D")
    raise CycleCensoredError(f"SPRT cycle exceeded {cap} steps")


@dataclass
class CycleSample:
    """Many independent SPRT cycles: lengths, terminal values, first increments."""

    lam: np.ndarray
    terminal: np.ndarray
    first_llr: np.ndarray

    @property
    def below(self) -> np.ndarray:
        return self.terminal < 0


def sample_sprt_cycles(
    pair: DistributionPair,
    D: float,
    regime: Regime,
    n: int,
    seed: int,
    cap: int = DEFAULT_CAP,
) -> CycleSample:
    """Vectorised :func:`simulate_sprt_cycle` for ``n`` cycles on one seeded generator."""
    if not D > 0:
        raise ValueError(f"D must be positive, got {D}")
    f = _regime_density(pair, regime)
    rng = make_rng(seed, CYCLE)
    lam = np.zeros(n, dtype=np.int64)
    term = np.zeros(n)
    first = np.zeros(n)
    w = np.zeros(n)
    rows = np.arange(n)
    step = 0
    while rows.size:
        step += 1
        if step > cap:
            raise CycleCensoredError(f"{rows.size} SPRT cycles exceeded {cap} steps")
        inc = pair.llr(f.transform(pair.draw_noise(rng, rows.size)))
        if step == 1:
            first[rows] = inc
        w[rows] += inc
        wr = w[rows]
        done = (wr < 0) | (wr > D)
        if done.any():
            idx = rows[done]
            lam[idx] = step
            term[idx] = wr[done]
            rows = rows[~done]
    return CycleSample(lam, term, first)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()) if x.size else math.nan, math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


@dataclass
class CycleStats:
    """Monte Carlo summary of the ``D = inf`` SPRT cycle under ``f0``.

    Attributes:
        mean_lambda_inf: Mean length of a cycle with only the lower boundary.
        mean_abs_W: Mean ``|W|`` at the end of such a cycle.
        mean_abs_W_hplus: Same, after truncation at ``-h``.
        p_neg_inf: Probability a single pre-change LLR is negative.
        p_neg_1: Probability a single post-change LLR is negative.
        mean_abs_trunc_LLR_neg: Mean of ``min(|LLR|, h)`` given a negative pre-change LLR.
        terminal_sample: Up to ``RESERVOIR`` untruncated terminal values.
    """

    h: float
    n_trials: int
    kl_f0_f1: float
    mean_lambda_inf: float
    se_lambda_inf: float
    mean_abs_W: float
    se_abs_W: float
    mean_abs_W_hplus: float
    se_abs_W_hplus: float
    p_neg_inf: float
    se_p_neg_inf: float
    p_neg_1: float
    se_p_neg_1: float
    mean_abs_trunc_LLR_neg: float
    se_abs_trunc_LLR_neg: float
    wald_gap: float
    se_wald_gap: float
    seed: int = 0
    terminal_sample: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def to_json(self) -> str:
        d = asdict(self)
        d["terminal_sample"] = self.terminal_sample.tolist()
        d["h"] = "inf" if self.h == math.inf else self.h
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "CycleStats":
        d = json.loads(text)
        d["h"] = math.inf if d["h"] == "inf" else float(d["h"])
        d["terminal_sample"] = np.asarray(d["terminal_sample"], dtype=float)
        return cls(**d)


def estimate_cycle_stats(
    pair: DistributionPair,
    h: float,
    n_trials: int,
    seed: int,
    *,
    cap: int = DEFAULT_CAP,
    wald_sigmas: float = 5.0,
) -> CycleStats:
    """Estimate the cycle quantities entering the duty-cycle bounds.

    Raises:
        WaldConsistencyError: If ``E|W|`` and ``D(f0||f1) E[lambda]`` differ by
            more than ``wald_sigmas`` standard errors.
    """
    if n_trials < 1000:
        raise ValueError("n_trials must be >= 1000")
    if not h >= 0:
        raise ValueError("h must be >= 0")
    cyc = sample_sprt_cycles(pair, math.inf, "pre_change", n_trials, seed, cap)
    absw = np.abs(cyc.terminal)
    absw_h = np.abs(truncate(cyc.terminal, h))
    neg = cyc.first_llr < 0
    trunc_neg = np.abs(truncate(cyc.first_llr[neg], h))

    # post-change sign probability on an independent sub-stream of the same seed
    u1 = pair.llr(pair.f1.transform(pair.draw_noise(make_rng(derive_seed(seed, 1), CYCLE), n_trials)))
    neg1 = (u1 < 0).astype(float)

    gap = absw - pair.kl_f0_f1 * cyc.lam
    stats = CycleStats(
        h=h,
        n_trials=n_trials,
        kl_f0_f1=pair.kl_f0_f1,
        mean_lambda_inf=_mean_se(cyc.lam)[0],
        se_lambda_inf=_mean_se(cyc.lam)[1],
        mean_abs_W=_mean_se(absw)[0],
        se_abs_W=_mean_se(absw)[1],
        mean_abs_W_hplus=_mean_se(absw_h)[0],
        se_abs_W_hplus=_mean_se(absw_h)[1],
        p_neg_inf=_mean_se(neg.astype(float))[0],
        se_p_neg_inf=_mean_se(neg.astype(float))[1],
        p_neg_1=_mean_se(neg1)[0],
        se_p_neg_1=_mean_se(neg1)[1],
        mean_abs_trunc_LLR_neg=_mean_se(trunc_neg)[0],
        se_abs_trunc_LLR_neg=_mean_se(trunc_neg)[1],
        wald_gap=_mean_se(gap)[0],
        se_wald_gap=_mean_se(gap)[1],
        seed=int(seed),
        terminal_sample=cyc.terminal[:RESERVOIR].copy(),
    )
    if abs(stats.wald_gap) > wald_sigmas * stats.se_wald_gap:
        raise WaldConsistencyError(
            f"E|W| - KL*E[lambda] = {stats.wald_gap:.4g} exceeds {wald_sigmas} SE ({stats.se_wald_gap:.3g})"
        )
    return stats


@dataclass(frozen=True)
class ConditionalCycleMeans:
    """Cycle and sojourn means conditioned on the SPRT ending below 0."""

    lam: float
    se_lam: float
    sojourn: float
    se_sojourn: float
    p_below: float
    n_accepted: int
    n_trials: int


def conditional_cycle_means(
    pair: DistributionPair,
    D: float,
    mu: float,
    h: float,
    regime: Regime,
    n_trials: int,
    seed: int,
    *,
    cap: int = DEFAULT_CAP,
) -> ConditionalCycleMeans:
    """Rejection estimate of ``E[lambda_D | W < 0]`` and ``E[T | W < 0]`` under ``regime``."""
    cyc = sample_sprt_cycles(pair, D, regime, n_trials, seed, cap)
    keep = cyc.below
    k = int(keep.sum())
    if k < MIN_ACCEPTED:
        raise InsufficientDataError(f"only {k} of {n_trials} cycles ended below 0 (need {MIN_ACCEPTED})")
    lam, se_lam = _mean_se(cyc.lam[keep])
    soj, se_soj = _mean_se(sojourn_lengths(truncate(cyc.terminal[keep], h), mu))
    return ConditionalCycleMeans(lam, se_lam, soj, se_soj, k / n_trials, k, n_trials)


def cycle_length_bound(stats: CycleStats) -> float:
    """Upper bound on ``E[lambda_D | W < 0]`` valid for every D."""
    return stats.mean_lambda_inf / stats.p_neg_inf


def bound_T_L_inf(stats: CycleStats, mu: float) -> float:
    """Lower bound on the pre-change conditional sojourn mean."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    return stats.mean_abs_trunc_LLR_neg / mu * stats.p_neg_inf


def bound_T_U_inf(stats: CycleStats, mu: float) -> float:
    """Upper bound on the pre-change conditional sojourn mean."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    return stats.mean_abs_W_hplus / (mu * stats.p_neg_inf) + 1.0


def bound_T_U_1(stats: CycleStats, mu: float) -> float:
    """Upper bound on the post-change conditional sojourn mean."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    return stats.mean_abs_W_hplus / (mu * stats.p_neg_1) + 1.0


def pdc_renewal(lambda_cond_mean: float, sojourn_cond_mean: float) -> float:
    """Long-run observing fraction of alternating cycles and sojourns."""
    if sojourn_cond_mean < 0 or lambda_cond_mean < 0:
        raise ValueError("means must be non-negative")
    return lambda_cond_mean / (lambda_cond_mean + sojourn_cond_mean)
