"""Observation models, likelihood ratios and change-point streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Union

import numpy as np

from qcdlab.rng import BLOCK, CHANGE, OBS, make_rng


class DomainError(ValueError):
    """An observation lies outside the support of a density."""


class InvalidPairError(ValueError):
    """The pre/post-change densities do not define a detectable change."""


@dataclass(frozen=True)
class Gaussian:
    mean: float
    variance: float

    kind = "gaussian"
    noise = "normal"

    def __post_init__(self) -> None:
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise ValueError(f"Gaussian variance must be positive and finite, got {self.variance}")
        if not math.isfinite(self.mean):
            raise ValueError(f"Gaussian mean must be finite, got {self.mean}")

    @property
    def mean_value(self) -> float:
        return self.mean

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def log_density(self, x: float) -> float:
        return -0.5 * math.log(2 * math.pi * self.variance) - (x - self.mean) ** 2 / (2 * self.variance)

    def transform(self, z: np.ndarray) -> np.ndarray:
        """Map standard-normal noise to draws from this density."""
        return self.mean + self.std * z

    def sample(self, rng: np.random.Generator, size: int | None = None):
        z = rng.standard_normal(size)
        return self.transform(z) if size is not None else float(self.transform(z))

    def in_support(self, x) -> np.ndarray:
        return np.isfinite(x)


class _Discrete:
    """Shared behaviour of finite-support models (Bernoulli, Tabular)."""

    noise = "uniform"
    support: tuple[float, ...]
    probabilities: tuple[float, ...]

    def _check(self) -> None:
        s = np.asarray(self.support, dtype=float)
        p = np.asarray(self.probabilities, dtype=float)
        if s.ndim != 1 or s.size == 0 or s.size != p.size:
            raise ValueError("support and probabilities must be non-empty and of equal length")
        if np.unique(s).size != s.size:
            raise ValueError("support values must be distinct")
        if np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(math.fsum(p) - 1.0) > 1e-12:
            raise ValueError(f"probabilities must sum to 1 within 1e-12, got {math.fsum(p)!r}")

    @property
    def mean_value(self) -> float:
        return math.fsum(s * p for s, p in zip(self.support, self.probabilities))

    def _cumulative(self) -> np.ndarray:
        c = np.cumsum(self.probabilities)
        c[-1] = 1.0
        return c

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map uniform noise on [0, 1) to atoms of the support (inverse CDF)."""
        idx = np.searchsorted(self._cumulative(), u, side="right")
        return np.asarray(self.support, dtype=float)[np.minimum(idx, len(self.support) - 1)]

    def sample(self, rng: np.random.Generator, size: int | None = None):
        u = rng.random(size)
        return self.transform(u) if size is not None else float(self.transform(np.asarray(u)))

    def log_density(self, x: float) -> float:
        for s, p in zip(self.support, self.probabilities):
            if x == s:
                return math.log(p) if p > 0 else -math.inf
        return -math.inf

    def in_support(self, x) -> np.ndarray:
        s = np.asarray(self.support, dtype=float)[np.asarray(self.probabilities) > 0]
        return np.isin(x, s)


@dataclass(frozen=True)
class Tabular(_Discrete):
    support: tuple[float, ...]
    probabilities: tuple[float, ...]

    kind = "tabular"

    def __post_init__(self) -> None:
        object.__setattr__(self, "support", tuple(float(v) for v in self.support))
        object.__setattr__(self, "probabilities", tuple(float(v) for v in self.probabilities))
        self._check()


@dataclass(frozen=True)
class Bernoulli(_Discrete):
    p: float

    kind = "bernoulli"

    def __post_init__(self) -> None:
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"Bernoulli p must lie in (0, 1), got {self.p}")

    @property
    def support(self) -> tuple[float, ...]:  # type: ignore[override]
        return (0.0, 1.0)

    @property
    def probabilities(self) -> tuple[float, ...]:  # type: ignore[override]
        return (1.0 - self.p, self.p)


DistributionModel = Union[Gaussian, Bernoulli, Tabular]


@dataclass(frozen=True)
class DistributionPair:
    """Pre-change density ``f0`` and post-change density ``f1``.

    Construction rejects pairs whose KL divergences are not both strictly
    positive and finite, since no detector in this package is defined for
    them. Both divergences are computed in closed form (Gaussian) or by exact
    summation (finite support).
    """

    f0: DistributionModel
    f1: DistributionModel
    kl_f1_f0: float = field(init=False)
    kl_f0_f1: float = field(init=False)

    def __post_init__(self) -> None:
        if self.f0.noise != self.f1.noise:
            raise InvalidPairError("f0 and f1 must both be Gaussian or both be finite-support")
        if isinstance(self.f0, Gaussian):
            kl10 = _gaussian_kl(self.f1, self.f0)
            kl01 = _gaussian_kl(self.f0, self.f1)
            a = 1.0 / self.f0.variance - 1.0 / self.f1.variance
            object.__setattr__(self, "_equal_var", self.f0.variance == self.f1.variance)
            object.__setattr__(self, "_slope", (self.f1.mean - self.f0.mean) / self.f0.variance)
            object.__setattr__(self, "_mid", 0.5 * (self.f0.mean + self.f1.mean))
            object.__setattr__(self, "_quad", a)
            object.__setattr__(self, "_logratio", 0.5 * math.log(self.f1.variance / self.f0.variance))
        else:
            s0 = {s: p for s, p in zip(self.f0.support, self.f0.probabilities) if p > 0}
            s1 = {s: p for s, p in zip(self.f1.support, self.f1.probabilities) if p > 0}
            if set(s0) != set(s1):
                raise InvalidPairError("finite-support densities must share the same support")
            support = np.array(sorted(s0), dtype=float)
            llr = np.array([math.log(s1[s]) - math.log(s0[s]) for s in support])
            kl10 = math.fsum(s1[s] * v for s, v in zip(support, llr))
            kl01 = math.fsum(-s0[s] * v for s, v in zip(support, llr))
            object.__setattr__(self, "_support", support)
            object.__setattr__(self, "_llr_table", llr)
        if not (0 < kl10 < math.inf and 0 < kl01 < math.inf):
            raise InvalidPairError(
                f"pair must satisfy 0 < KL < inf in both directions, got D(f1||f0)={kl10}, D(f0||f1)={kl01}"
            )
        object.__setattr__(self, "kl_f1_f0", float(kl10))
        object.__setattr__(self, "kl_f0_f1", float(kl01))

    @property
    def discrete(self) -> bool:
        return self.f0.noise == "uniform"

    def llr(self, x):
        """Vectorised log f1(x) - log f0(x); raises DomainError off the common support."""
        x = np.asarray(x, dtype=float)
        if self.discrete:
            idx = np.searchsorted(self._support, x)
            idx_c = np.minimum(idx, self._support.size - 1)
            if not np.all(self._support[idx_c] == x):
                bad = x[self._support[idx_c] != x].ravel()[0]
                which = "f0" if not self.f0.in_support(bad) else "f1"
                raise DomainError(f"x={bad!r} is outside the support of {which}")
            return self._llr_table[idx_c]
        if not np.all(np.isfinite(x)):
            raise DomainError("x must be finite for Gaussian densities (f0)")
        if self._equal_var:
            return self._slope * (x - self._mid)
        return (
            -self._logratio
            - (x - self.f1.mean) ** 2 / (2 * self.f1.variance)
            + (x - self.f0.mean) ** 2 / (2 * self.f0.variance)
        )

    def llr_values(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """For finite support: (llr per atom, P0 per atom, P1 per atom)."""
        if not self.discrete:
            raise TypeError("llr_values is only defined for finite-support pairs")
        p0 = dict(zip(self.f0.support, self.f0.probabilities))
        p1 = dict(zip(self.f1.support, self.f1.probabilities))
        return (
            self._llr_table.copy(),
            np.array([p0[s] for s in self._support]),
            np.array([p1[s] for s in self._support]),
        )

    def draw_noise(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.random(size) if self.discrete else rng.standard_normal(size)


def _gaussian_kl(p: Gaussian, q: Gaussian) -> float:
    r = p.variance / q.variance
    return 0.5 * (r + (p.mean - q.mean) ** 2 / q.variance - 1.0 - math.log(r))


def log_likelihood_ratio(pair: DistributionPair, x: float) -> float:
    return float(pair.llr(x))


def kl_divergence(pair: DistributionPair, direction: Literal["f1_vs_f0", "f0_vs_f1"]) -> float:
    if direction == "f1_vs_f0":
        return pair.kl_f1_f0
    if direction == "f0_vs_f1":
        return pair.kl_f0_f1
    raise ValueError(f"unknown direction {direction!r}")


@dataclass(frozen=True)
class Deterministic:
    gamma: float  # positive integer or math.inf

    kind = "deterministic"

    def __post_init__(self) -> None:
        g = self.gamma
        if not (g == math.inf or (float(g).is_integer() and g >= 1)):
            raise ValueError(f"gamma must be a positive integer or inf, got {g}")

    def realize(self, rng: np.random.Generator | None = None) -> float:
        return self.gamma if self.gamma == math.inf else int(self.gamma)


@dataclass(frozen=True)
class Geometric:
    rho: float

    kind = "geometric"

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie strictly in (0, 1), got {self.rho}")

    def realize(self, rng: np.random.Generator) -> int:
        # P(gamma = n) = (1 - rho)^(n - 1) rho, n >= 1
        return int(rng.geometric(self.rho))


ChangePointSpec = Union[Deterministic, Geometric]


class ObservationStream:
    """Seeded sequence X_1, X_2, ... with X_n ~ f0 for n < gamma, f1 after.

    The realised change point is drawn once at construction (for a geometric
    spec) from a sub-stream independent of the observation noise.
    """

    def __init__(self, pair: DistributionPair, change_point: ChangePointSpec, seed: int) -> None:
        self.pair = pair
        self.seed = int(seed)
        self.change_point = change_point.realize(make_rng(self.seed, CHANGE))
        self.position = 0
        self._rng = make_rng(self.seed, OBS)
        self._buf0 = self._buf1 = None
        self._k = BLOCK

    def next_observation(self) -> float:
        if self._k == BLOCK:
            noise = self.pair.draw_noise(self._rng, BLOCK)
            self._buf0 = self.pair.f0.transform(noise)
            self._buf1 = self.pair.f1.transform(noise)
            self._k = 0
        self.position += 1
        buf = self._buf1 if self.position >= self.change_point else self._buf0
        x = float(buf[self._k])
        self._k += 1
        return x


def next_observation(stream: ObservationStream) -> float:
    return stream.next_observation()
