"""Experiment drivers behind the CLI subcommands.

Each driver turns a validated :class:`~qcdlab.config.ExperimentConfig` into
rows (or a record) plus a poisoned flag. Seeds for every component are
derived deterministically from the config seed, so a rerun reproduces the
output byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

from qcdlab.config import ExperimentConfig, Table2Section, TradeoffFamily, _inf
from qcdlab.design import (
    InfeasibleDesignError,
    calibrate_lower_threshold,
    calibrate_mu,
    calibrate_threshold,
    pdc_approx,
    pdc_approx_hinf,
    threshold_for_far,
)
from qcdlab.detectors import (
    CuSum,
    DECuSum,
    DEShiryaev,
    FractionalSampling,
    Shiryaev,
    Trace,
    run_policy,
)
from qcdlab.distributions import ObservationStream
from qcdlab.metrics import estimate_bayes, estimate_cadd, estimate_far, estimate_pdc
from qcdlab.renewal import CycleStats, estimate_cycle_stats
from qcdlab.rng import derive_seed

# derived-seed tags
_FAR, _CADD, _PDC, _BAYES, _TABLE2, _TRADEOFF, _CALIB, _CYCLES = range(1, 9)


@dataclass
class Table:
    columns: list[str]
    rows: list[dict[str, Any]] = field(default_factory=list)

    @property
    def poisoned(self) -> bool:
        return any(r.get("poisoned") for r in self.rows)


def _flags_text(flags) -> str:
    return ";".join(sorted(set(flags)))


def run_simulate(cfg: ExperimentConfig) -> Trace:
    if cfg.simulate is None:
        raise ValueError("config has no [simulate] section")
    sec = cfg.simulate
    pair = cfg.pair.build()
    policy = sec.detector.build()
    stream = ObservationStream(pair, sec.change_point.build(), cfg.seed)
    return run_policy(policy, stream, cap=sec.steps, stop_at_threshold=not sec.run_past_alarm)


TABLE2_COLUMNS = [
    "sub_table", "D", "mu", "pdc_sim", "pdc_sim_se", "pdc_approx", "pdc_approx_ceiling",
    "pdc_display", "acceptance", "conditioning", "seed", "flags", "poisoned",
]


def run_table2(cfg: ExperimentConfig) -> Table:
    sec = cfg.table2 or Table2Section()
    pair = cfg.pair.build()
    h = _inf(sec.h)
    t = cfg.trials
    stats = estimate_cycle_stats(pair, h, t.cycles, derive_seed(cfg.seed, _CYCLES))
    cells = [("a", D, sec.mu_fixed) for D in sec.D_values] + [("b", sec.D_fixed, mu) for mu in sec.mu_values]
    table = Table(TABLE2_COLUMNS)
    for k, (sub, D, mu) in enumerate(cells):
        seed = derive_seed(cfg.seed, _TABLE2, k)
        est = estimate_pdc(DECuSum(D, mu, h), pair, t.pdc_grid, t.pdc, t.cap, seed=seed,
                           threads=cfg.threads, conditioning=t.pdc_conditioning)
        table.rows.append({
            "sub_table": sub,
            "D": float(D),
            "mu": float(mu),
            "pdc_sim": est.value,
            "pdc_sim_se": est.std_error,
            "pdc_approx": pdc_approx_hinf(pair, mu),
            "pdc_approx_ceiling": pdc_approx(stats, mu),
            "pdc_display": f"{est.value:.3f}",
            "acceptance": est.extra["acceptance"],
            "conditioning": t.pdc_conditioning,
            "seed": seed,
            "flags": _flags_text(est.flags),
            "poisoned": bool(est.flags),
        })
    return table


MINIMAX_COLUMNS = [
    "family", "beta", "h", "D", "mu", "pdc", "pdc_se", "far", "far_se", "mean_tau_inf",
    "cadd", "cadd_se", "cadd_argmax_n", "cadd_display", "seed", "flags", "poisoned",
]
BAYES_COLUMNS = [
    "family", "A", "B", "beta", "rho", "add", "add_se", "pfa", "pfa_se", "ano", "ano_se",
    "add_display", "seed", "flags", "poisoned",
]


def _minimax_row(cfg: ExperimentConfig, fam: TradeoffFamily, D: float, seed: int) -> dict[str, Any]:
    pair = cfg.pair.build()
    t = cfg.trials
    sec = cfg.tradeoff
    h = _inf(fam.h)
    flags: list[str] = []
    row: dict[str, Any] = {"family": fam.family, "beta": fam.beta, "h": h, "D": float(D), "seed": seed}
    pdc_seed = derive_seed(seed, _PDC)
    if fam.family == "cusum":
        policy, mu, pdc, pdc_se = CuSum(D), None, 1.0, 0.0
    elif fam.family == "decusum":
        if fam.mu is not None:
            mu = fam.mu
            est = estimate_pdc(DECuSum(D, mu, h), pair, t.pdc_grid, t.pdc, t.cap, seed=pdc_seed,
                               threads=cfg.threads, conditioning=t.pdc_conditioning)
        else:
            if fam.beta is None:
                raise ValueError("decusum trade-off family needs beta or mu")
            try:
                cal = calibrate_mu(pair, h, D, fam.beta, sec.tolerance, sec.budget, n_trials=t.pdc,
                                   seed=pdc_seed, threads=cfg.threads, conditioning=t.pdc_conditioning)
            except InfeasibleDesignError as err:
                row.update(flags=f"infeasible: {err}", poisoned=True)
                return row
            mu, est = cal.value, cal.estimate
        if mu == math.inf:
            policy, pdc, pdc_se = CuSum(D), 1.0, 0.0
        else:
            policy, pdc, pdc_se = DECuSum(D, mu, h), est.value, est.std_error
            flags += est.flags
    elif fam.family == "fractional-cusum":
        if fam.beta is None:
            raise ValueError("fractional-cusum trade-off family needs beta")
        policy, mu = FractionalSampling(CuSum(D), fam.beta), None
        est = estimate_pdc(policy, pair, t.pdc_grid, t.pdc, t.cap, seed=pdc_seed,
                           threads=cfg.threads, conditioning=t.pdc_conditioning)
        pdc, pdc_se = est.value, est.std_error
        flags += est.flags
    else:
        raise ValueError(f"family {fam.family!r} is not a minimax detector")
    far = estimate_far(policy, pair, t.far, t.cap, seed=derive_seed(seed, _FAR), threads=cfg.threads)
    cadd = estimate_cadd(policy, pair, t.cadd_n_max, t.cadd, t.cap, seed=derive_seed(seed, _CADD),
                         threads=cfg.threads)
    flags += far.flags + cadd.flags
    row.update(
        mu=mu, pdc=pdc, pdc_se=pdc_se, far=far.value, far_se=far.std_error,
        mean_tau_inf=far.extra["mean_tau"], cadd=cadd.sup_value, cadd_se=cadd.sup.std_error,
        cadd_argmax_n=cadd.argmax_n, cadd_display=f"{cadd.sup_value:.2f}",
        flags=_flags_text(flags), poisoned=bool(flags),
    )
    return row


def _bayes_row(cfg: ExperimentConfig, fam: TradeoffFamily, A: float, seed: int) -> dict[str, Any]:
    pair = cfg.pair.build()
    t = cfg.trials
    sec = cfg.tradeoff
    rho = sec.rho
    B = beta = None
    flags: list[str] = []
    if fam.family == "shiryaev":
        policy = Shiryaev(A, rho)
    elif fam.family == "deshiryaev":
        if sec.ano_target is None:
            raise ValueError("deshiryaev trade-off family needs tradeoff.ano_target")
        cal = calibrate_lower_threshold(pair, A, rho, sec.ano_target, sec.tolerance, sec.budget,
                                        n_trials=t.bayes, seed=derive_seed(seed, _CALIB), threads=cfg.threads)
        B = cal.value
        if not cal.converged:
            flags.append("not_converged")
        policy = DEShiryaev(A, rho, B)
    elif fam.family == "fractional-shiryaev":
        if fam.beta is not None:
            beta = fam.beta
        elif sec.ano_target is not None:
            # pre-change slots average 1/rho - 1; sample that fraction of them
            beta = min(1.0, sec.ano_target / (1.0 / rho - 1.0))
        else:
            raise ValueError("fractional-shiryaev needs beta or tradeoff.ano_target")
        policy = FractionalSampling(Shiryaev(A, rho), beta)
    else:
        raise ValueError(f"family {fam.family!r} is not a Bayesian detector")
    est = estimate_bayes(policy, pair, rho, t.bayes, t.cap, seed=derive_seed(seed, _BAYES), threads=cfg.threads)
    flags += est.add.flags
    return {
        "family": fam.family, "A": float(A), "B": B, "beta": beta, "rho": rho,
        "add": est.add.value, "add_se": est.add.std_error, "pfa": est.pfa.value, "pfa_se": est.pfa.std_error,
        "ano": est.ano.value, "ano_se": est.ano.std_error, "add_display": f"{est.add.value:.2f}",
        "seed": seed, "flags": _flags_text(flags), "poisoned": bool(flags),
    }


def run_tradeoff(cfg: ExperimentConfig) -> Table:
    """One row per (family, threshold), sorted by family then threshold.

    All families share the derived seed of each threshold index, giving
    common random numbers across the compared detectors.
    """
    sec = cfg.tradeoff
    if sec is None:
        raise ValueError("config has no [tradeoff] section")
    if sec.setting == "bayes" and sec.rho is None:
        raise ValueError("bayes trade-off needs tradeoff.rho")
    thresholds = sorted(sec.thresholds)
    table = Table(MINIMAX_COLUMNS if sec.setting == "minimax" else BAYES_COLUMNS)
    make = _minimax_row if sec.setting == "minimax" else _bayes_row
    for fam in sec.families:
        for k, x in enumerate(thresholds):
            table.rows.append(make(cfg, fam, x, derive_seed(cfg.seed, _TRADEOFF, k)))
    return table


def run_calibrate(cfg: ExperimentConfig) -> dict[str, Any]:
    """Design record for DE-CuSum meeting FAR <= alpha and PDC <= beta."""
    sec = cfg.calibrate
    if sec is None:
        raise ValueError("config has no [calibrate] section")
    pair = cfg.pair.build()
    t = cfg.trials
    h = _inf(sec.h)
    seeds = {
        "pdc": derive_seed(cfg.seed, _CALIB, _PDC),
        "far": derive_seed(cfg.seed, _CALIB, _FAR),
    }
    flags: list[str] = []
    D = threshold_for_far(sec.alpha)

    def tune_mu(D: float):
        return calibrate_mu(pair, h, D, sec.beta, sec.tolerance, sec.budget, n_trials=t.pdc, seed=seeds["pdc"],
                            threads=cfg.threads, conditioning=t.pdc_conditioning)

    def factory(mu: float):
        return (lambda d: CuSum(d)) if mu == math.inf else (lambda d: DECuSum(d, mu, h))

    cal = tune_mu(D)
    mu = cal.value
    if sec.threshold == "calibrated":
        for _ in range(2):
            th = calibrate_threshold(factory(mu), pair, sec.alpha, sec.tolerance, sec.budget,
                                     n_trials=t.far, seed=seeds["far"], threads=cfg.threads, cap=t.cap)
            if not th.converged:
                flags.append("threshold_not_converged")
            D = th.value
            cal = tune_mu(D)
            mu = cal.value
    policy = factory(mu)(D)
    far = estimate_far(policy, pair, t.far, t.cap, seed=seeds["far"], threads=cfg.threads)
    flags += far.flags
    if cal.estimate is not None:
        flags += cal.estimate.flags
    if far.value > sec.alpha * (1 + sec.tolerance):
        flags.append("far_above_alpha")
    return {
        "alpha": sec.alpha,
        "beta": sec.beta,
        "h": h,
        "D": D,
        "mu": mu,
        "family": "cusum" if mu == math.inf else "decusum",
        "threshold_mode": sec.threshold,
        "verified_far": far.value,
        "verified_far_se": far.std_error,
        "verified_pdc": 1.0 if cal.estimate is None else cal.estimate.value,
        "verified_pdc_se": 0.0 if cal.estimate is None else cal.estimate.std_error,
        "seeds": seeds,
        "flags": sorted(set(flags)),
        "poisoned": bool(flags),
        "config_hash": cfg.config_hash,
    }


def run_cycle_stats(cfg: ExperimentConfig) -> CycleStats:
    h = _inf(cfg.cycle_stats.h) if cfg.cycle_stats is not None else math.inf
    return estimate_cycle_stats(cfg.pair.build(), h, cfg.trials.cycles, derive_seed(cfg.seed, _CYCLES))
