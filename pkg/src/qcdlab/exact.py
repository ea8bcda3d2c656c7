"""Exact cycle and detector quantities for finite-support observation models.

When the LLR takes finitely many values, the SPRT/CuSum statistic lives on
the lattice of non-negative integer combinations of those values. States are
stored as integer count vectors, so no rounding is involved in identifying
them; absorbing-chain quantities follow from sparse linear solves.

Only parameter ranges with a finite reachable lattice are supported; the
search raises once ``max_states`` is exceeded.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from qcdlab.distributions import DistributionPair
from qcdlab.renewal import sojourn_length, truncate

Regime = Literal["pre_change", "post_change"]


class LatticeTooLargeError(RuntimeError):
    pass


@dataclass
class _Lattice:
    states: list[tuple[int, ...]]
    values: np.ndarray
    Q: sp.csr_matrix  # transient -> transient
    exits: list[list[tuple[float, float, bool]]]  # per state: (prob, terminal value, below)


def _build(pair: DistributionPair, D: float, regime: Regime, clamp: bool, max_states: int) -> _Lattice:
    llr, p0, p1 = pair.llr_values()
    probs = p0 if regime == "pre_change" else p1
    atoms = [(k, float(llr[k]), float(probs[k])) for k in range(llr.size) if probs[k] > 0]
    origin = (0,) * llr.size

    def value(s):
        return math.fsum(c * float(llr[k]) for k, c in enumerate(s))

    index = {origin: 0}
    states = [origin]
    rows, cols, data = [], [], []
    exits: list[list[tuple[float, float, bool]]] = [[]]
    queue = deque([origin])
    while queue:
        s = queue.popleft()
        i = index[s]
        v = value(s)
        for k, step, p in atoms:
            w = v + step
            if w > D:
                exits[i].append((p, w, False))
                continue
            if w < 0:
                if not clamp:
                    exits[i].append((p, w, True))
                    continue
                t = origin
            else:
                t = tuple(c + (1 if kk == k else 0) for kk, c in enumerate(s))
            if t not in index:
                if len(states) >= max_states:
                    raise LatticeTooLargeError(f"reachable lattice exceeds {max_states} states")
                index[t] = len(states)
                states.append(t)
                exits.append([])
                queue.append(t)
            rows.append(i)
            cols.append(index[t])
            data.append(p)
    n = len(states)
    Q = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    return _Lattice(states, np.array([value(s) for s in states]), Q, exits)


@dataclass(frozen=True)
class ExactCycle:
    """Exact SPRT cycle quantities from ``W = 0`` with boundaries 0 and D."""

    mean_lambda: float
    p_below: float
    mean_lambda_given_below: float
    terminal_below: tuple[tuple[float, float], ...]  # (value, probability)
    n_states: int

    def mean_sojourn_given_below(self, mu: float, h: float) -> float:
        tot = math.fsum(p * sojourn_length(float(truncate(w, h)), mu) for w, p in self.terminal_below)
        return tot / self.p_below

    def pdc_renewal(self, mu: float, h: float) -> float:
        lam = self.mean_lambda_given_below
        return lam / (lam + self.mean_sojourn_given_below(mu, h))


def exact_sprt_cycle(
    pair: DistributionPair, D: float, regime: Regime = "pre_change", *, max_states: int = 50_000
) -> ExactCycle:
    lat = _build(pair, D, regime, clamp=False, max_states=max_states)
    n = len(lat.states)
    A = (sp.identity(n, format="csc") - lat.Q.tocsc())
    ones = np.ones(n)
    below_now = np.array([math.fsum(p for p, _, b in e if b) for e in lat.exits])
    mean_lam = spla.spsolve(A, ones)
    p_below = spla.spsolve(A, below_now)
    # expected visits from the origin: row 0 of (I - Q)^{-1}
    e0 = np.zeros(n)
    e0[0] = 1.0
    visits = spla.spsolve(A.T.tocsc(), e0)
    lam_below = float(visits @ p_below)
    term: dict[float, float] = {}
    for i, e in enumerate(lat.exits):
        for p, w, b in e:
            if b:
                term[w] = term.get(w, 0.0) + visits[i] * p
    pb = float(np.atleast_1d(p_below)[0])
    return ExactCycle(
        mean_lambda=float(np.atleast_1d(mean_lam)[0]),
        p_below=pb,
        mean_lambda_given_below=lam_below / pb,
        terminal_below=tuple(sorted(term.items())),
        n_states=n,
    )


def exact_cusum_arl(pair: DistributionPair, D: float, regime: Regime = "pre_change", *, max_states: int = 50_000) -> float:
    """Exact mean CuSum stopping time with ``C_0 = 0`` and i.i.d. observations from ``regime``."""
    lat = _build(pair, D, regime, clamp=True, max_states=max_states)
    n = len(lat.states)
    A = sp.identity(n, format="csc") - lat.Q.tocsc()
    return float(np.atleast_1d(spla.spsolve(A, np.ones(n)))[0])


def exact_decusum_pdc(
    pair: DistributionPair,
    D: float,
    mu: float,
    h: float,
    horizon: int,
    *,
    max_states: int = 50_000,
) -> float:
    """Exact ``E[sum_{k<n} M_k | tau >= n] / (n - 1)`` for DE-CuSum under ``f0`` at ``n = horizon``.

    Forward recursion on the killed chain whose states are the SPRT lattice
    plus one state per remaining skip count.
    """
    lat = _build(pair, D, "pre_change", clamp=False, max_states=max_states)
    n_lat = len(lat.states)
    skips: dict[int, int] = {}
    rows, cols, data = [], [], []
    Qc = lat.Q.tocoo()
    rows += Qc.row.tolist()
    cols += Qc.col.tolist()
    data += Qc.data.tolist()

    def skip_state(r: int) -> int:
        if r not in skips:
            skips[r] = n_lat + len(skips)
        return skips[r]

    for i, e in enumerate(lat.exits):
        for p, w, b in e:
            if b:
                r = sojourn_length(float(truncate(w, h)), mu)
                rows.append(i)
                cols.append(skip_state(r) if r > 0 else 0)
                data.append(p)
    # skip countdown: r -> r-1, 1 -> origin; make sure every intermediate count exists
    for r in range(1, max(skips, default=0) + 1):
        skip_state(r)
    for r, j in skips.items():
        rows.append(j)
        cols.append(skip_state(r - 1) if r > 1 else 0)
        data.append(1.0)
    n = n_lat + len(skips)
    P = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    PT = P.T.tocsr()
    observing = np.zeros(n)
    observing[:n_lat] = 1.0

    pi = np.zeros(n)
    pi[0] = 1.0
    kappa = np.zeros(n)
    for _ in range(horizon - 1):
        kappa = PT @ (kappa + pi * observing)
        pi = PT @ pi
    return float(kappa.sum() / ((horizon - 1) * pi.sum()))
