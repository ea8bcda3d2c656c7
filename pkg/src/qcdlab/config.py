"""Experiment configuration: a TOML (or JSON) file validated into typed models.

Infinite values (``h``, ``gamma``) are written as the string ``"inf"``.
See README.md for the full schema and examples.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from qcdlab import detectors as det
from qcdlab import distributions as dist

InfFloat = Union[float, Literal["inf"]]


def _inf(v: InfFloat) -> float:
    return math.inf if v == "inf" else float(v)


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GaussianSpec(_Model):
    kind: Literal["gaussian"]
    mean: float
    var: float = Field(gt=0)

    def build(self) -> dist.Gaussian:
        return dist.Gaussian(self.mean, self.var)


class BernoulliSpec(_Model):
    kind: Literal["bernoulli"]
    p: float = Field(gt=0, lt=1)

    def build(self) -> dist.Bernoulli:
        return dist.Bernoulli(self.p)


class TabularSpec(_Model):
    kind: Literal["tabular"]
    support: list[float]
    probabilities: list[float]

    def build(self) -> dist.Tabular:
        return dist.Tabular(tuple(self.support), tuple(self.probabilities))


ModelSpec = Annotated[Union[GaussianSpec, BernoulliSpec, TabularSpec], Field(discriminator="kind")]


class PairSpec(_Model):
    f0: ModelSpec = GaussianSpec(kind="gaussian", mean=0.0, var=1.0)
    f1: ModelSpec = GaussianSpec(kind="gaussian", mean=0.75, var=1.0)

    def build(self) -> dist.DistributionPair:
        return dist.DistributionPair(self.f0.build(), self.f1.build())


class ChangePointConfig(_Model):
    kind: Literal["deterministic", "geometric"] = "deterministic"
    gamma: InfFloat = "inf"
    rho: Optional[float] = Field(default=None, gt=0, lt=1)

    def build(self) -> dist.ChangePointSpec:
        if self.kind == "geometric":
            if self.rho is None:
                raise ValueError("geometric change point needs rho")
            return dist.Geometric(self.rho)
        return dist.Deterministic(_inf(self.gamma))


class DetectorSpec(_Model):
    """One detector. Which fields are required depends on ``family``."""

    family: Literal["cusum", "decusum", "shiryaev", "deshiryaev", "fractional-cusum", "fractional-shiryaev"]
    D: Optional[float] = Field(default=None, gt=0)
    mu: Optional[float] = Field(default=None, gt=0)
    h: InfFloat = "inf"
    A: Optional[float] = Field(default=None, gt=0, lt=1)
    B: Optional[float] = Field(default=None, ge=0, lt=1)
    rho: Optional[float] = Field(default=None, gt=0, lt=1)
    beta: Optional[float] = Field(default=None, gt=0, le=1)

    @field_validator("h")
    @classmethod
    def _h_nonneg(cls, v):
        if v != "inf" and v < 0:
            raise ValueError("h must be >= 0 or 'inf'")
        return v

    def _need(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ValueError(f"family {self.family!r} needs {', '.join(missing)}")

    def build(self, *, D: float | None = None, A: float | None = None, mu: float | None = None) -> det.Policy:
        D = D if D is not None else self.D
        A = A if A is not None else self.A
        mu = mu if mu is not None else self.mu
        f = self.family
        if f in ("cusum", "fractional-cusum", "decusum") and D is None:
            raise ValueError(f"family {f!r} needs D")
        if f in ("shiryaev", "deshiryaev", "fractional-shiryaev"):
            self._need("rho")
            if A is None:
                raise ValueError(f"family {f!r} needs A")
        if f == "cusum":
            return det.CuSum(D)
        if f == "decusum":
            if mu is None:
                raise ValueError("family 'decusum' needs mu")
            if mu == math.inf:
                return det.CuSum(D)
            return det.DECuSum(D, mu, _inf(self.h))
        if f == "shiryaev":
            return det.Shiryaev(A, self.rho)
        if f == "deshiryaev":
            return det.DEShiryaev(A, self.rho, self.B or 0.0)
        self._need("beta")
        if f == "fractional-cusum":
            return det.FractionalSampling(det.CuSum(D), self.beta)
        return det.FractionalSampling(det.Shiryaev(A, self.rho), self.beta)


class TrialCounts(_Model):
    far: int = Field(default=10_000, ge=2)
    cadd: int = Field(default=10_000, ge=2)
    pdc: int = Field(default=20_000, ge=2)
    bayes: int = Field(default=10_000, ge=2)
    cycles: int = Field(default=100_000, ge=1000)
    cap: int = Field(default=det.DEFAULT_CAP, ge=1)
    cadd_n_max: int = Field(default=20, ge=1)
    pdc_grid: list[int] = Field(default_factory=lambda: list(range(100, 1001, 100)))
    pdc_conditioning: Literal["path", "regenerative"] = "regenerative"


class SimulateSection(_Model):
    detector: DetectorSpec
    change_point: ChangePointConfig = ChangePointConfig()
    steps: int = Field(default=200, ge=1)
    run_past_alarm: bool = False


class TradeoffFamily(_Model):
    family: Literal["cusum", "decusum", "fractional-cusum", "shiryaev", "deshiryaev", "fractional-shiryaev"]
    beta: Optional[float] = Field(default=None, gt=0, le=1)
    h: InfFloat = "inf"
    mu: Optional[float] = Field(default=None, gt=0)


class TradeoffSection(_Model):
    setting: Literal["minimax", "bayes"] = "minimax"
    thresholds: list[float] = Field(min_length=1)
    families: list[TradeoffFamily] = Field(min_length=1)
    rho: Optional[float] = Field(default=None, gt=0, lt=1)
    ano_target: Optional[float] = Field(default=None, gt=0)
    tolerance: float = Field(default=0.05, gt=0)
    budget: int = Field(default=20, ge=1)


class Table2Section(_Model):
    h: InfFloat = "inf"
    mu_fixed: float = 0.1
    D_values: list[float] = Field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0, 6.0])
    D_fixed: float = 6.0
    mu_values: list[float] = Field(default_factory=lambda: [0.01, 0.05, 0.2, 0.3, 0.4, 0.6])


class CalibrateSection(_Model):
    alpha: float = Field(gt=0, lt=1)
    beta: float = Field(gt=0, le=1)
    h: InfFloat = "inf"
    threshold: Literal["theory", "calibrated"] = "theory"
    tolerance: float = Field(default=0.05, gt=0)
    budget: int = Field(default=20, ge=1)


class CycleStatsSection(_Model):
    h: InfFloat = "inf"


class ExperimentConfig(_Model):
    name: str = "experiment"
    seed: int = Field(default=0, ge=0, lt=2**64)
    threads: int = Field(default=1, ge=1)
    out: str = "results"
    pair: PairSpec = PairSpec()
    trials: TrialCounts = TrialCounts()
    simulate: Optional[SimulateSection] = None
    tradeoff: Optional[TradeoffSection] = None
    table2: Optional[Table2Section] = None
    calibrate: Optional[CalibrateSection] = None
    cycle_stats: Optional[CycleStatsSection] = Field(default=None, alias="cycle-stats")

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True, exclude={"threads", "out"}),
                          sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        """Digest of everything that determines results (worker count and output dir excluded)."""
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_validation(err)) from None


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Read a ``.toml`` or ``.json`` config; ``None`` gives the defaults."""
    if path is None:
        return parse_config({})
    p = Path(path)
    text = p.read_text()
    try:
        data = json.loads(text) if p.suffix == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as err:
        raise ConfigError(f"{p}: {err}") from None
    return parse_config(data)
