"""Data-efficient quickest change detection: detectors, Monte Carlo metrics and design tools."""

from __future__ import annotations

from qcdlab.detectors import (
    NO_TRUNCATION,
    ContractViolation,
    CuSum,
    CuSumState,
    DECuSum,
    DECuSumState,
    DEShiryaev,
    DEShiryaevState,
    FractionalSampling,
    Shiryaev,
    ShiryaevState,
    Trace,
    cusum_step,
    decusum_control,
    decusum_step,
    run_policy,
    shiryaev_update,
)
from qcdlab.distributions import (
    Bernoulli,
    Deterministic,
    DistributionPair,
    DomainError,
    Gaussian,
    Geometric,
    InvalidPairError,
    ObservationStream,
    Tabular,
    kl_divergence,
    log_likelihood_ratio,
    next_observation,
)

__all__ = [
    "NO_TRUNCATION", "ContractViolation", "CuSum", "CuSumState", "DECuSum", "DECuSumState", "DEShiryaev",
    "DEShiryaevState", "FractionalSampling", "Shiryaev", "ShiryaevState", "Trace", "cusum_step",
    "decusum_control", "decusum_step", "run_policy", "shiryaev_update", "Bernoulli", "Deterministic",
    "DistributionPair", "DomainError", "Gaussian", "Geometric", "InvalidPairError", "ObservationStream",
    "Tabular", "kl_divergence", "log_likelihood_ratio", "next_observation",
]
