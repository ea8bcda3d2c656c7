"""Detector state machines: CuSum, DE-CuSum, Shiryaev, DE-Shiryaev, fractional sampling.

Each policy exposes two decisions per time step: the observation control
``M_{n+1}`` (take or skip the next sample) and the stop decision. The scalar
methods (``control``/``advance``) are the reference implementation used for
traces; the ``batch_*`` methods apply the identical arithmetic to arrays of
independent trials and are what the Monte Carlo engine runs.

The Shiryaev family is tracked internally on the log-odds scale
``log(p / (1 - p))`` so thresholds close to 1 do not lose precision.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Union

import numpy as np

from qcdlab.distributions import DistributionPair, ObservationStream
from qcdlab.rng import BLOCK, COIN, make_rng

#: ``h`` value meaning "undershoots are never truncated"
NO_TRUNCATION = math.inf
#: relative slack when deciding that a skip ramp has reached zero; keeps the
#: floating-point ramp W + mu + mu + ... in step with ceil(-x / mu)
SKIP_SNAP = 1e-9
DEFAULT_CAP = 10_000_000


class ContractViolation(RuntimeError):
    """An observation was supplied on a skip step, or withheld on an observe step."""


def _floor_for(h: float) -> float:
    # -0.0 would leak into traces as "-0.0"
    return 0.0 if h == 0 else -h


def _logit(p: float) -> float:
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    return math.log(p) - math.log1p(-p)


def _expit(v: float) -> float:
    if v == -math.inf:
        return 0.0
    if v == math.inf:
        return 1.0
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


# --------------------------------------------------------------------------
# states


@dataclass
class CuSumState:
    D: float
    C: float = 0.0

    @property
    def stopped(self) -> bool:
        return self.C > self.D


@dataclass
class DECuSumState:
    D: float
    mu: float
    h: float = NO_TRUNCATION
    W: float = 0.0

    def __post_init__(self) -> None:
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.h >= 0:
            raise ValueError(f"h must be >= 0, got {self.h}")

    @property
    def stopped(self) -> bool:
        return self.W > self.D


@dataclass
class ShiryaevState:
    A: float
    rho: float
    log_odds: float = -math.inf

    @property
    def p(self) -> float:
        return _expit(self.log_odds)

    @property
    def stopped(self) -> bool:
        return self.log_odds > _logit(self.A)


@dataclass
class DEShiryaevState(ShiryaevState):
    B: float = 0.0


# --------------------------------------------------------------------------
# single-step operations


def cusum_step(state: CuSumState, x: float, pair: DistributionPair) -> CuSumState:
    v = state.C + pair.llr(x)
    return replace(state, C=float(v) if v > 0.0 else 0.0)


def decusum_control(state: DECuSumState) -> int:
    return 0 if state.W < 0 else 1


def _skip_ramp(w: float, mu: float) -> float:
    v = w + mu
    return 0.0 if v >= -SKIP_SNAP * mu else v


def decusum_step(state: DECuSumState, x: Optional[float], pair: DistributionPair) -> DECuSumState:
    """Advance the DE-CuSum statistic by one time slot.

    On a skip slot (``W < 0``) the statistic ramps up deterministically,
    ``W' = min(W + mu, 0)``; otherwise ``W' = max(W + log L(x), -h)``.
    """
    if decusum_control(state) == 0:
        if x is not None:
            raise ContractViolation("observation supplied on a skip step (W < 0)")
        return replace(state, W=_skip_ramp(state.W, state.mu))
    if x is None:
        raise ContractViolation("observation required when W >= 0")
    v = float(state.W + pair.llr(x))
    if state.h != NO_TRUNCATION:
        floor = _floor_for(state.h)
        v = v if v > floor else floor
    return replace(state, W=v)


def _prior_log_odds(log_odds, log_rho: float, log1m_rho: float):
    # odds' = (odds + rho) / (1 - rho)
    return np.logaddexp(log_odds, log_rho) - log1m_rho


def shiryaev_update(p: float, rho: float, logL: Optional[float] = None) -> float:
    """One posterior update; ``logL=None`` applies the prior-only recursion."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p == 1.0:
        return 1.0
    lo = float(_prior_log_odds(_logit(p), math.log(rho), math.log1p(-rho)))
    if logL is not None:
        lo += logL
    return _expit(lo)


def shiryaev_step(state: ShiryaevState, x: Optional[float], pair: DistributionPair) -> ShiryaevState:
    lo = float(_prior_log_odds(state.log_odds, math.log(state.rho), math.log1p(-state.rho)))
    if x is not None:
        lo = float(lo + pair.llr(x))
    return replace(state, log_odds=lo)


def deshiryaev_control(state: DEShiryaevState) -> int:
    return 1 if state.log_odds >= _logit(state.B) else 0


# --------------------------------------------------------------------------
# policies


@dataclass(frozen=True)
class CuSum:
    D: float

    family = "cusum"
    needs_coins = False

    def __post_init__(self) -> None:
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")

    @property
    def threshold(self) -> float:
        return self.D

    def new_state(self) -> CuSumState:
        return CuSumState(D=self.D)

    def control(self, state: CuSumState, coin: float | None = None) -> int:
        return 1

    def advance(self, state: CuSumState, x: Optional[float], pair: DistributionPair) -> CuSumState:
        return state if x is None else cusum_step(state, x, pair)

    def statistic(self, state: CuSumState) -> float:
        return state.C

    def stopped(self, state: CuSumState) -> bool:
        return state.stopped

    def batch_init(self, n: int) -> np.ndarray:
        return np.zeros(n)

    def batch_control(self, S: np.ndarray, coins: np.ndarray | None = None) -> np.ndarray:
        return np.ones(S.shape, dtype=bool)

    def batch_advance(self, S: np.ndarray, llr: np.ndarray, M: np.ndarray) -> np.ndarray:
        return np.where(M, np.maximum(S + llr, 0.0), S)

    def batch_stopped(self, S: np.ndarray) -> np.ndarray:
        return S > self.D

    def batch_at_origin(self, S: np.ndarray) -> np.ndarray:
        return S == 0.0


@dataclass(frozen=True)
class DECuSum:
    D: float
    mu: float
    h: float = NO_TRUNCATION

    family = "decusum"
    needs_coins = False

    def __post_init__(self) -> None:
        DECuSumState(D=self.D, mu=self.mu, h=self.h)  # validates

    @property
    def threshold(self) -> float:
        return self.D

    @property
    def truncates(self) -> bool:
        return self.h != NO_TRUNCATION

    def new_state(self) -> DECuSumState:
        return DECuSumState(D=self.D, mu=self.mu, h=self.h)

    def control(self, state: DECuSumState, coin: float | None = None) -> int:
        return decusum_control(state)

    def advance(self, state: DECuSumState, x: Optional[float], pair: DistributionPair) -> DECuSumState:
        return decusum_step(state, x, pair)

    def statistic(self, state: DECuSumState) -> float:
        return state.W

    def stopped(self, state: DECuSumState) -> bool:
        return state.stopped

    def batch_init(self, n: int) -> np.ndarray:
        return np.zeros(n)

    def batch_control(self, S: np.ndarray, coins: np.ndarray | None = None) -> np.ndarray:
        return S >= 0

    def batch_advance(self, S: np.ndarray, llr: np.ndarray, M: np.ndarray) -> np.ndarray:
        obs = S + llr
        if self.truncates:
            obs = np.maximum(obs, _floor_for(self.h))
        ramp = S + self.mu
        ramp = np.where(ramp >= -SKIP_SNAP * self.mu, 0.0, ramp)
        return np.where(M, obs, ramp)

    def batch_stopped(self, S: np.ndarray) -> np.ndarray:
        return S > self.D

    def batch_at_origin(self, S: np.ndarray) -> np.ndarray:
        return S == 0.0


@dataclass(frozen=True)
class Shiryaev:
    A: float
    rho: float

    family = "shiryaev"
    needs_coins = False

    def __post_init__(self) -> None:
        if not 0.0 < self.A < 1.0:
            raise ValueError(f"A must lie in (0, 1), got {self.A}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        object.__setattr__(self, "_log_rho", math.log(self.rho))
        object.__setattr__(self, "_log1m_rho", math.log1p(-self.rho))
        object.__setattr__(self, "_upper", _logit(self.A))

    @property
    def threshold(self) -> float:
        return self.A

    def new_state(self) -> ShiryaevState:
        return ShiryaevState(A=self.A, rho=self.rho)

    def control(self, state: ShiryaevState, coin: float | None = None) -> int:
        return 1

    def advance(self, state: ShiryaevState, x: Optional[float], pair: DistributionPair) -> ShiryaevState:
        return shiryaev_step(state, x, pair)

    def statistic(self, state: ShiryaevState) -> float:
        return state.p

    def stopped(self, state: ShiryaevState) -> bool:
        return state.log_odds > self._upper

    def batch_init(self, n: int) -> np.ndarray:
        return np.full(n, -np.inf)

    def batch_control(self, S: np.ndarray, coins: np.ndarray | None = None) -> np.ndarray:
        return np.ones(S.shape, dtype=bool)

    def batch_advance(self, S: np.ndarray, llr: np.ndarray, M: np.ndarray) -> np.ndarray:
        prior = _prior_log_odds(S, self._log_rho, self._log1m_rho)
        return np.where(M, prior + llr, prior)

    def batch_stopped(self, S: np.ndarray) -> np.ndarray:
        return S > self._upper


@dataclass(frozen=True)
class DEShiryaev(Shiryaev):
    B: float = 0.0

    family = "deshiryaev"

    def __post_init__(self) -> None:
        super().__post_init__()
        if not 0.0 <= self.B < self.A:
            raise ValueError(f"B must satisfy 0 <= B < A, got B={self.B}, A={self.A}")
        object.__setattr__(self, "_lower", _logit(self.B))

    def new_state(self) -> DEShiryaevState:
        return DEShiryaevState(A=self.A, rho=self.rho, B=self.B)

    def control(self, state: ShiryaevState, coin: float | None = None) -> int:
        return 1 if state.log_odds >= self._lower else 0

    def batch_control(self, S: np.ndarray, coins: np.ndarray | None = None) -> np.ndarray:
        return S >= self._lower


@dataclass(frozen=True)
class FractionalSampling:
    """Base detector fed a sample only when an independent coin (prob. ``beta``) says so.

    A skipped slot leaves a CuSum statistic unchanged and applies the
    prior-only recursion to a Shiryaev statistic.
    """

    base: Union[CuSum, Shiryaev]
    beta: float

    needs_coins = True

    def __post_init__(self) -> None:
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if isinstance(self.base, (DECuSum, DEShiryaev, FractionalSampling)):
            raise TypeError("fractional sampling wraps a plain CuSum or Shiryaev detector")

    @property
    def family(self) -> str:
        return f"fractional-{self.base.family}"

    @property
    def threshold(self) -> float:
        return self.base.threshold

    def new_state(self):
        return self.base.new_state()

    def control(self, state, coin: float | None = None) -> int:
        if coin is None:
            raise ContractViolation("fractional sampling needs a coin outcome")
        return 1 if coin < self.beta else 0

    def advance(self, state, x, pair):
        return self.base.advance(state, x, pair)

    def statistic(self, state) -> float:
        return self.base.statistic(state)

    def stopped(self, state) -> bool:
        return self.base.stopped(state)

    def batch_init(self, n: int) -> np.ndarray:
        return self.base.batch_init(n)

    def batch_control(self, S: np.ndarray, coins: np.ndarray | None = None) -> np.ndarray:
        return coins < self.beta

    def batch_advance(self, S, llr, M):
        return self.base.batch_advance(S, llr, M)

    def batch_stopped(self, S):
        return self.base.batch_stopped(S)

    def batch_at_origin(self, S):
        return self.base.batch_at_origin(S)


Policy = Union[CuSum, DECuSum, Shiryaev, DEShiryaev, FractionalSampling]


# --------------------------------------------------------------------------
# driving a policy over a stream


class CoinStream:
    """Uniform coin outcomes on a sub-stream independent of the observations."""

    def __init__(self, seed: int) -> None:
        self._rng = make_rng(seed, COIN)
        self._buf = None
        self._k = BLOCK

    def next(self) -> float:
        if self._k == BLOCK:
            self._buf = self._rng.random(BLOCK)
            self._k = 0
        u = float(self._buf[self._k])
        self._k += 1
        return u


@dataclass
class Trace:
    decisions: list[int] = field(default_factory=list)
    statistic_path: list[float] = field(default_factory=list)
    tau: Optional[int] = None
    censored: bool = False
    observations_used: int = 0
    change_point: float = math.inf

    def rows(self) -> Iterable[tuple[int, int, float, int]]:
        for n, (m, s) in enumerate(zip(self.decisions, self.statistic_path), start=1):
            yield n, m, s, int(self.tau is not None and n >= self.tau)

    def to_csv(self, header: dict[str, object] | None = None) -> str:
        buf = io.StringIO()
        for key, value in (header or {}).items():
            buf.write(f"# {key}={value}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "M", "statistic", "stopped"])
        for n, m, s, stop in self.rows():
            w.writerow([n, m, repr(float(s)), stop])
        return buf.getvalue()


def run_policy(
    policy: Policy,
    stream: ObservationStream,
    cap: int = DEFAULT_CAP,
    *,
    stop_at_threshold: bool = True,
) -> Trace:
    """Run ``policy`` on ``stream`` until the first threshold crossing or ``cap`` steps.

    The stream advances every slot, so skipped observations are simply never
    looked at. With ``stop_at_threshold=False`` the statistic keeps evolving
    for the full ``cap`` steps and ``tau`` still records the first crossing.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    coins = CoinStream(stream.seed) if policy.needs_coins else None
    state = policy.new_state()
    trace = Trace(change_point=stream.change_point)
    for n in range(1, cap + 1):
        m = policy.control(state, coins.next() if coins is not None else None)
        x = stream.next_observation()
        state = policy.advance(state, x if m else None, stream.pair)
        trace.decisions.append(m)
        trace.statistic_path.append(policy.statistic(state))
        if trace.tau is None:
            trace.observations_used += m
            if policy.stopped(state):
                trace.tau = n
                if stop_at_threshold:
                    break
    trace.censored = trace.tau is None
    return trace
