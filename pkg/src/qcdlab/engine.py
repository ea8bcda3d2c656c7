"""Vectorised Monte Carlo engine.

Trials advance in lock-step on numpy arrays, but every trial owns its own
generator seeded with ``base_seed ^ i`` and draws noise in the same
``BLOCK``-sized chunks as :class:`~qcdlab.distributions.ObservationStream`.
A trial simulated here therefore reproduces, bit for bit, the trace that
:func:`~qcdlab.detectors.run_policy` produces on the stream with that seed.
Results depend only on the trial seeds, never on chunking or worker count.

Two conditioning modes are supported for pre-change duty-cycle estimates:

``path``
    Plain simulation; the caller rejects trials that stopped too early.
``regenerative``
    Whenever the statistic crosses its upper threshold the trial is rewound
    to its most recent regeneration point (statistic exactly at the origin)
    and continues on fresh noise. The resulting path is a concatenation of
    independent excursions, each conditioned on returning below the origin.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from qcdlab.detectors import DEFAULT_CAP, Policy
from qcdlab.distributions import ChangePointSpec, Deterministic, DistributionPair, Geometric
from qcdlab.rng import BLOCK, CHANGE, COIN, OBS, make_rng, trial_seeds

CHUNK = 4096

Mode = Literal["path", "regenerative"]


@dataclass
class BatchResult:
    """Per-trial outcomes, in trial-index order.

    Attributes:
        tau: Stopping time; equals the cap for censored trials.
        censored: True where the trial never stopped within the cap.
        change_point: Realised change point (``inf`` when pre-change only).
        obs_pre: Observations taken at times ``k <= min(tau, gamma - 1)``.
        obs_total: Observations taken at times ``k <= tau``.
        checkpoints: Times ``c`` at which observation counts were recorded.
        ck_obs: Observations taken at times ``k <= c``, one column per checkpoint.
        ck_alive: True where the trial had not stopped by time ``c``.
    """

    tau: np.ndarray
    censored: np.ndarray
    change_point: np.ndarray
    obs_pre: np.ndarray
    obs_total: np.ndarray
    checkpoints: np.ndarray
    ck_obs: np.ndarray
    ck_alive: np.ndarray
    mode: str = "path"
    cap: int = DEFAULT_CAP

    @property
    def n_trials(self) -> int:
        return int(self.tau.size)

    @staticmethod
    def concat(parts: Sequence["BatchResult"]) -> "BatchResult":
        first = parts[0]
        return BatchResult(
            tau=np.concatenate([p.tau for p in parts]),
            censored=np.concatenate([p.censored for p in parts]),
            change_point=np.concatenate([p.change_point for p in parts]),
            obs_pre=np.concatenate([p.obs_pre for p in parts]),
            obs_total=np.concatenate([p.obs_total for p in parts]),
            checkpoints=first.checkpoints,
            ck_obs=np.concatenate([p.ck_obs for p in parts]),
            ck_alive=np.concatenate([p.ck_alive for p in parts]),
            mode=first.mode,
            cap=first.cap,
        )


@dataclass(frozen=True)
class _Job:
    policy: Policy
    pair: DistributionPair
    change_point: ChangePointSpec
    seeds: np.ndarray
    cap: int
    checkpoints: tuple[int, ...]
    mode: str


def _realise_change_points(spec: ChangePointSpec, seeds: np.ndarray) -> np.ndarray:
    if isinstance(spec, Deterministic):
        return np.full(seeds.size, float(spec.gamma))
    if isinstance(spec, Geometric):
        return np.array([float(spec.realize(make_rng(int(s), CHANGE))) for s in seeds])
    raise TypeError(f"unsupported change-point spec {spec!r}")


def _draw(rngs, pair: DistributionPair, rows: np.ndarray):
    noise = np.stack([pair.draw_noise(rngs[r], BLOCK) for r in rows])
    return pair.llr(pair.f0.transform(noise)), pair.llr(pair.f1.transform(noise))


def _draw_coins(rngs, rows: np.ndarray) -> np.ndarray:
    return np.stack([rngs[r].random(BLOCK) for r in rows])


def _run_path(job: _Job) -> BatchResult:
    policy, pair, seeds, cap = job.policy, job.pair, job.seeds, job.cap
    m = seeds.size
    gamma = _realise_change_points(job.change_point, seeds)
    cps = np.asarray(job.checkpoints, dtype=np.int64)
    ck_col = {int(c): k for k, c in enumerate(cps)}

    rngs = [make_rng(int(s), OBS) for s in seeds]
    coin_rngs = [make_rng(int(s), COIN) for s in seeds] if policy.needs_coins else None

    S = policy.batch_init(m)
    tau = np.full(m, cap, dtype=np.int64)
    censored = np.ones(m, dtype=bool)
    obs = np.zeros(m, dtype=np.int64)
    obs_pre = np.zeros(m, dtype=np.int64)
    ck_obs = np.zeros((m, cps.size), dtype=np.int64)
    ck_alive = np.zeros((m, cps.size), dtype=bool)

    rows = np.arange(m)
    t = 0
    while rows.size and t < cap:
        L0, L1 = _draw(rngs, pair, rows)
        coins = _draw_coins(coin_rngs, rows) if coin_rngs is not None else None
        g = gamma[rows]
        s, o, op = S[rows], obs[rows], obs_pre[rows]
        live = np.ones(rows.size, dtype=bool)
        for j in range(min(BLOCK, cap - t)):
            n = t + j + 1
            M = policy.batch_control(s, coins[:, j] if coins is not None else None) & live
            post = n >= g
            llr = np.where(post, L1[:, j], L0[:, j])
            s = np.where(live, policy.batch_advance(s, llr, M), s)
            o += M
            op += M & ~post
            stop = live & policy.batch_stopped(s)
            if stop.any():
                idx = rows[stop]
                tau[idx] = n
                censored[idx] = False
                live &= ~stop
            col = ck_col.get(n)
            if col is not None:
                ck_obs[rows, col] = o
                ck_alive[rows, col] = live
            if not live.any():
                break
        S[rows], obs[rows], obs_pre[rows] = s, o, op
        rows = rows[live]
        t += BLOCK
    return BatchResult(tau, censored, gamma, obs_pre, obs, cps, ck_obs, ck_alive, "path", cap)


def _run_regenerative(job: _Job) -> BatchResult:
    policy, pair, seeds, cap = job.policy, job.pair, job.seeds, job.cap
    if not isinstance(job.change_point, Deterministic) or job.change_point.gamma != math.inf:
        raise ValueError("regenerative mode is defined for pre-change streams only (gamma = inf)")
    if not hasattr(policy, "batch_at_origin"):
        raise TypeError(f"{policy.family} has no regeneration point")
    m = seeds.size
    cps = np.asarray(job.checkpoints, dtype=np.int64)
    if cps.size == 0:
        raise ValueError("regenerative mode needs at least one checkpoint")
    horizon = int(cps[-1])
    col_of = np.full(horizon + 1, -1, dtype=np.int64)
    col_of[cps] = np.arange(cps.size)

    rngs = [make_rng(int(s), OBS) for s in seeds]
    coin_rngs = [make_rng(int(s), COIN) for s in seeds] if policy.needs_coins else None

    S = policy.batch_init(m)
    origin = policy.batch_init(1)[0]
    clock = np.zeros(m, dtype=np.int64)
    obs = np.zeros(m, dtype=np.int64)
    regen_clock = np.zeros(m, dtype=np.int64)
    regen_obs = np.zeros(m, dtype=np.int64)
    used = np.zeros(m, dtype=np.int64)  # raw iterations, including discarded excursions
    ck_obs = np.zeros((m, cps.size), dtype=np.int64)
    censored = np.zeros(m, dtype=bool)

    rows = np.arange(m)
    sweeps = 0
    while rows.size:
        L0, _ = _draw(rngs, pair, rows)
        coins = _draw_coins(coin_rngs, rows) if coin_rngs is not None else None
        s, c, o = S[rows], clock[rows], obs[rows]
        rc, ro = regen_clock[rows], regen_obs[rows]
        live = np.ones(rows.size, dtype=bool)
        for j in range(BLOCK):
            M = policy.batch_control(s, coins[:, j] if coins is not None else None) & live
            s = np.where(live, policy.batch_advance(s, L0[:, j], M), s)
            c += live
            o += M
            stop = live & policy.batch_stopped(s)
            if stop.any():
                s = np.where(stop, origin, s)
                c = np.where(stop, rc, c)
                o = np.where(stop, ro, o)
            keep = live & ~stop
            regen = keep & policy.batch_at_origin(s)
            rc = np.where(regen, c, rc)
            ro = np.where(regen, o, ro)
            col = col_of[np.minimum(c, horizon)]
            hit = keep & (col >= 0) & (c <= horizon)
            if hit.any():
                ck_obs[rows[hit], col[hit]] = o[hit]
            live &= c < horizon
            if not live.any():
                break
        S[rows], clock[rows], obs[rows] = s, c, o
        regen_clock[rows], regen_obs[rows] = rc, ro
        sweeps += 1
        used[rows] = sweeps * BLOCK
        over = used[rows] >= cap
        censored[rows[over & live]] = True
        rows = rows[live & ~over]
    ck_alive = ~censored[:, None] & np.ones((1, cps.size), dtype=bool)
    return BatchResult(
        tau=np.full(m, cap, dtype=np.int64),
        censored=censored,
        change_point=np.full(m, math.inf),
        obs_pre=obs.copy(),
        obs_total=obs,
        checkpoints=cps,
        ck_obs=ck_obs,
        ck_alive=ck_alive,
        mode="regenerative",
        cap=cap,
    )


def _run(job: _Job) -> BatchResult:
    return _run_regenerative(job) if job.mode == "regenerative" else _run_path(job)


def simulate(
    policy: Policy,
    pair: DistributionPair,
    change_point: ChangePointSpec,
    n_trials: int,
    seed: int,
    *,
    cap: int = DEFAULT_CAP,
    checkpoints: Sequence[int] = (),
    mode: Mode = "path",
    threads: int = 1,
    offset: int = 0,
) -> BatchResult:
    """Simulate ``n_trials`` independent runs of ``policy``.

    Args:
        policy: Any detector policy from :mod:`qcdlab.detectors`.
        pair: Pre/post-change densities.
        change_point: Deterministic or geometric change point.
        n_trials: Number of trials.
        seed: Base seed; trial ``i`` uses ``seed ^ (offset + i)``.
        cap: Maximum number of time steps per trial.
        checkpoints: Increasing times at which cumulative observation counts
            are recorded.
        mode: ``"path"`` or ``"regenerative"`` (see module docstring).
        threads: Worker processes; the result does not depend on this.
        offset: First trial index, for extending an existing run.

    Returns:
        A :class:`BatchResult` in trial-index order.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    cps = tuple(int(c) for c in checkpoints)
    if any(b <= a for a, b in zip(cps, cps[1:])) or any(c < 1 for c in cps):
        raise ValueError("checkpoints must be positive and strictly increasing")
    if mode not in ("path", "regenerative"):
        raise ValueError(f"unknown mode {mode!r}")
    seeds = trial_seeds(seed, n_trials, offset)
    jobs = [
        _Job(policy, pair, change_point, seeds[k : k + CHUNK], cap, cps, mode)
        for k in range(0, n_trials, CHUNK)
    ]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run, jobs))
    else:
        parts = [_run(j) for j in jobs]
    return BatchResult.concat(parts)


@dataclass
class PathMatrix:
    """Statistic and control decisions for every trial and step (no stopping)."""

    statistic: np.ndarray  # (n_trials, steps), value after step n
    decisions: np.ndarray  # (n_trials, steps), M_n
    change_point: np.ndarray

    def first_crossing(self, stopped: np.ndarray) -> np.ndarray:
        """First step (1-based) where ``stopped`` is true, or 0 if never."""
        hit = stopped.any(axis=1)
        return np.where(hit, stopped.argmax(axis=1) + 1, 0)


def statistic_paths(
    policy: Policy,
    pair: DistributionPair,
    change_point: ChangePointSpec,
    n_trials: int,
    seed: int,
    steps: int,
    *,
    offset: int = 0,
) -> PathMatrix:
    """Full statistic paths of ``policy`` for ``steps`` slots, ignoring the stop rule.

    Trial ``i`` sees exactly the observations of ``ObservationStream(pair, change_point, seed ^ (offset + i))``.
    """
    seeds = trial_seeds(seed, n_trials, offset)
    gamma = _realise_change_points(change_point, seeds)
    rngs = [make_rng(int(s), OBS) for s in seeds]
    coin_rngs = [make_rng(int(s), COIN) for s in seeds] if policy.needs_coins else None
    rows = np.arange(n_trials)
    stat = np.empty((n_trials, steps))
    dec = np.empty((n_trials, steps), dtype=np.int8)
    s = policy.batch_init(n_trials)
    for t0 in range(0, steps, BLOCK):
        L0, L1 = _draw(rngs, pair, rows)
        coins = _draw_coins(coin_rngs, rows) if coin_rngs is not None else None
        for j in range(min(BLOCK, steps - t0)):
            n = t0 + j + 1
            M = policy.batch_control(s, coins[:, j] if coins is not None else None)
            s = policy.batch_advance(s, np.where(n >= gamma, L1[:, j], L0[:, j]), M)
            stat[:, n - 1] = s
            dec[:, n - 1] = M
    return PathMatrix(stat, dec, gamma)
