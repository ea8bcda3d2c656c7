"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line in ``conftest.ACCEPTANCE``; the lines are
printed in the pytest terminal summary. Run on its own with

    pytest tests/test_acceptance.py -v
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from qcdlab.config import parse_config
from qcdlab.design import calibrate_lower_threshold, calibrate_mu, calibrate_threshold, threshold_for_far
from qcdlab.detectors import (
    CuSum,
    DECuSum,
    DEShiryaev,
    FractionalSampling,
    Shiryaev,
    run_policy,
)
from qcdlab.distributions import Deterministic, Geometric, ObservationStream
from qcdlab.engine import simulate, statistic_paths
from qcdlab.exact import exact_cusum_arl, exact_decusum_pdc, exact_sprt_cycle
from qcdlab.experiments import run_table2
from qcdlab.metrics import estimate_bayes, estimate_cadd, estimate_far
from qcdlab.renewal import (
    WaldConsistencyError,
    bound_T_L_inf,
    bound_T_U_1,
    bound_T_U_inf,
    conditional_cycle_means,
    estimate_cycle_stats,
    cycle_length_bound,
    sample_sprt_cycles,
)

pytestmark = pytest.mark.slow

KL = 0.28125


def record(k: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[k] = (bool(ok), detail)
    assert ok, detail


def _se_mean(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / math.sqrt(x.size))


@pytest.fixture(scope="module")
def table2_rows():
    cfg = parse_config({"seed": 2024, "trials": {"pdc": 20_000}})
    t0 = time.perf_counter()
    table = run_table2(cfg)
    return table.rows, time.perf_counter() - t0


PUBLISHED_BY_MU = {0.01: (0.033, 0.034), 0.05: (0.145, 0.151), 0.2: (0.37, 0.41), 0.3: (0.46, 0.51),
           0.4: (0.51, 0.58), 0.6: (0.58, 0.68)}
PUBLISHED_BY_D = {1.0: 0.16, 2.0: 0.20, 3.0: 0.22, 4.0: 0.238, 6.0: 0.248}


def _printed_match(value: float, printed: float) -> bool:
    # the printed column mixes rounding (0.1509 -> 0.151) and truncation (0.4156 -> 0.41)
    digits = len(repr(printed).split(".")[1])
    return abs(value - printed) < 10.0**-digits


def test_criterion_01_table2_fixed_threshold(table2_rows):
    rows, elapsed = table2_rows
    bad, cells = [], []
    for r in (r for r in rows if r["sub_table"] == "b"):
        mu = r["mu"]
        sim_pub, approx_pub = PUBLISHED_BY_MU[mu]
        tol = 0.02 if mu >= 0.3 else 0.01
        closed = mu / (mu + KL)
        cells.append(f"{mu:g}:{r['pdc_sim']:.4f}")
        if abs(r["pdc_sim"] - sim_pub) > tol:
            bad.append(f"mu={mu} sim {r['pdc_sim']:.4f} vs {sim_pub}")
        if abs(r["pdc_approx"] - closed) >= 5e-4 or not _printed_match(r["pdc_approx"], approx_pub):
            bad.append(f"mu={mu} approx {r['pdc_approx']:.4f} vs {approx_pub}")
    ok = not bad and elapsed <= 600 and len(cells) == 6
    record(1, ok, f"D=6 PDC {', '.join(cells)}; table runtime {elapsed:.0f}s" + (f"; {bad}" if bad else ""))


def test_criterion_02_table2_fixed_mu(table2_rows):
    rows, _ = table2_rows
    a = sorted((r for r in rows if r["sub_table"] == "a"), key=lambda r: r["D"])
    vals = [r["pdc_sim"] for r in a]
    increasing = all(y > x for x, y in zip(vals, vals[1:]))
    bad = [f"D={r['D']:g} {r['pdc_sim']:.4f} vs {PUBLISHED_BY_D[r['D']]}" for r in a
           if abs(r["pdc_sim"] - PUBLISHED_BY_D[r["D"]]) > 0.015]
    approx_ok = all(abs(r["pdc_approx"] - 0.26) < 0.005 for r in a)
    record(2, increasing and not bad and approx_ok and len(a) == 5,
           f"mu=0.1 PDC {[round(v, 4) for v in vals]}, increasing={increasing}, approx={a[0]['pdc_approx']:.4f}"
           + (f"; {bad}" if bad else ""))


def test_criterion_03_far_dominance(gauss075):
    lines, ok = [], True
    for alpha in (0.05, 0.01):
        D = threshold_for_far(alpha)
        c = estimate_far(CuSum(D), gauss075, 10_000, seed=303)
        for mu, h in ((0.1, math.inf), (0.3, 0.5)):
            w = estimate_far(DECuSum(D, mu, h), gauss075, 10_000, seed=303)
            ok &= w.value <= c.value + 2 * math.hypot(w.std_error, c.std_error)
            lines.append(f"a={alpha} W(mu={mu},h={h})={w.value:.5f}")
        ok &= c.value <= alpha + 2 * c.std_error and c.reliable
        lines.append(f"a={alpha} C={c.value:.5f}+-{c.std_error:.5f}")
    record(3, ok, "; ".join(lines))


def test_criterion_04_sample_path_dominance(gauss075):
    violations = steps = 0
    D = 6.0
    for mu, h in ((0.1, math.inf), (0.3, 0.5), (0.05, 2.0)):
        c = statistic_paths(CuSum(D), gauss075, Deterministic(500), 1000, seed=404, steps=1000)
        w = statistic_paths(DECuSum(D, mu, h), gauss075, Deterministic(500), 1000, seed=404, steps=1000)
        violations += int((c.statistic < w.statistic).sum())
        tc = c.first_crossing(c.statistic > D).astype(float)
        tw = w.first_crossing(w.statistic > D).astype(float)
        tc[tc == 0] = math.inf
        tw[tw == 0] = math.inf
        violations += int((tc > tw).sum())
        steps += c.statistic.size
    record(4, violations == 0, f"{violations} violations over {steps} trial-steps (3 parameter sets)")


def test_criterion_05_reductions(gauss075, gauss08):
    dv = sv = 0
    for s in range(1000):
        seed = 505_000 + s
        a = run_policy(DECuSum(4.0, 0.2, 0.0), ObservationStream(gauss075, Deterministic(100), seed), cap=5000)
        b = run_policy(CuSum(4.0), ObservationStream(gauss075, Deterministic(100), seed), cap=5000)
        dv += a != b
        p = run_policy(DEShiryaev(0.99, 0.01, 0.0), ObservationStream(gauss08, Geometric(0.01), seed), cap=5000)
        q = run_policy(Shiryaev(0.99, 0.01), ObservationStream(gauss08, Geometric(0.01), seed), cap=5000)
        sv += p != q
    record(5, dv == 0 and sv == 0, f"h=0 mismatches {dv}/1000, B=0 mismatches {sv}/1000")


def test_criterion_06_skip_run_bound(gauss075):
    pm = statistic_paths(DECuSum(6.0, 0.1, 0.5), gauss075, Deterministic(500), 1000, seed=606, steps=1000)
    skip = pm.decisions == 0
    longest = 0
    run = np.zeros(skip.shape[0], dtype=np.int64)
    for j in range(skip.shape[1]):
        run = np.where(skip[:, j], run + 1, 0)
        longest = max(longest, int(run.max()))
    record(6, longest <= 5, f"longest skip run {longest} (bound 5) over 1000 streams x 1000 steps")


def test_criterion_07_wald_identity(gauss075):
    try:
        st = estimate_cycle_stats(gauss075, math.inf, 100_000, seed=707)
    except WaldConsistencyError as err:
        record(7, False, str(err))
        return
    z = st.wald_gap / st.se_wald_gap
    record(7, abs(z) <= 5, f"E|W|={st.mean_abs_W:.4f}, KL*E[lambda]={KL * st.mean_lambda_inf:.4f}, z={z:.2f}")


def _ratio_se(num: float, se_num: float, den: float, se_den: float) -> float:
    return math.hypot(se_num / den, num * se_den / den**2)


def test_criterion_08_renewal_bounds(gauss075):
    bad, n_checks = [], 0
    for h in (0.5, math.inf):
        st = estimate_cycle_stats(gauss075, h, 100_000, seed=808)
        lam_bound = cycle_length_bound(st)
        lam_bound_se = _ratio_se(st.mean_lambda_inf, st.se_lambda_inf, st.p_neg_inf, st.se_p_neg_inf)
        for D in (2.0, 6.0):
            for mu in (0.05, 0.1):
                pre = conditional_cycle_means(gauss075, D, mu, h, "pre_change", 100_000, seed=809)
                post = conditional_cycle_means(gauss075, D, mu, h, "post_change", 100_000, seed=810)
                tl = bound_T_L_inf(st, mu)
                tl_se = math.hypot(st.se_abs_trunc_LLR_neg * st.p_neg_inf,
                                   st.mean_abs_trunc_LLR_neg * st.se_p_neg_inf) / mu
                tu = bound_T_U_inf(st, mu)
                tu_se = _ratio_se(st.mean_abs_W_hplus, st.se_abs_W_hplus, st.p_neg_inf, st.se_p_neg_inf) / mu
                tu1 = bound_T_U_1(st, mu)
                tu1_se = _ratio_se(st.mean_abs_W_hplus, st.se_abs_W_hplus, st.p_neg_1, st.se_p_neg_1) / mu
                checks = {
                    "cycle_length_bound": pre.lam - lam_bound <= 3 * math.hypot(pre.se_lam, lam_bound_se),
                    "T_L": tl - pre.sojourn <= 3 * math.hypot(tl_se, pre.se_sojourn),
                    "T_U": pre.sojourn - tu <= 3 * math.hypot(tu_se, pre.se_sojourn),
                    "T_U1": post.sojourn - tu1 <= 3 * math.hypot(tu1_se, post.se_sojourn),
                }
                n_checks += len(checks)
                bad += [f"{k}(D={D},h={h},mu={mu})" for k, v in checks.items() if not v]
    record(8, not bad, f"{n_checks - len(bad)}/{n_checks} bound checks hold" + (f"; failed {bad}" if bad else ""))


def _weighted_slope(x, y, se) -> tuple[float, float]:
    x, y, w = np.asarray(x), np.asarray(y), 1.0 / np.asarray(se) ** 2
    xb = np.sum(w * x) / np.sum(w)
    sxx = np.sum(w * (x - xb) ** 2)
    slope = np.sum(w * (x - xb) * y) / sxx
    return float(slope), float(1.0 / math.sqrt(sxx))


def test_criterion_09_constant_delay_gap(gauss075):
    Ds, gaps, ses, parts = (4.0, 6.0, 8.0), [], [], []
    for D in Ds:
        mu = calibrate_mu(gauss075, math.inf, D, 0.5, n_trials=20_000, seed=909).value
        dw = estimate_cadd(DECuSum(D, mu), gauss075, n_max=10, trials_per_n=20_000, seed=910)
        dc = estimate_cadd(CuSum(D), gauss075, n_max=10, trials_per_n=20_000, seed=911)
        gaps.append(dw.sup_value - dc.sup_value)
        ses.append(math.hypot(dw.sup.std_error, dc.sup.std_error))
        parts.append(f"D={D:g} mu={mu:.3f} gap={gaps[-1]:.3f}+-{ses[-1]:.3f} (argmax {dw.argmax_n})")
    slope, se = _weighted_slope(Ds, gaps, ses)
    record(9, abs(slope) <= 2 * se, f"slope {slope:.4f} +- {se:.4f}; " + "; ".join(parts))


def test_criterion_10_de_beats_fractional_sampling(gauss075):
    parts, ok = [], True
    for D in (2.0, 4.0, 6.0):
        mu = calibrate_mu(gauss075, math.inf, D, 0.5, n_trials=20_000, seed=1010).value
        de = DECuSum(D, mu)
        far = estimate_far(de, gauss075, 10_000, seed=1011)
        cal = calibrate_threshold(lambda d: FractionalSampling(CuSum(d), 0.5), gauss075, far.value,
                                  n_trials=10_000, seed=1011)
        fs = FractionalSampling(CuSum(cal.value), 0.5)
        cw = estimate_cadd(de, gauss075, n_max=10, trials_per_n=10_000, seed=1012)
        cf = estimate_cadd(fs, gauss075, n_max=10, trials_per_n=10_000, seed=1013)
        gap = cf.sup_value - cw.sup_value
        se = math.hypot(cw.sup.std_error, cf.sup.std_error)
        ok &= cal.converged and gap >= 3 * se
        parts.append(f"D={D:g}: FAR {far.value:.4g} vs {cal.estimate.value:.4g}, CADD DE {cw.sup_value:.2f} "
                     f"FS {cf.sup_value:.2f} (gap {gap / se:.1f} SE)")
    record(10, ok, "; ".join(parts))


def _z(mc: np.ndarray, exact: float) -> float:
    return abs(float(mc.mean()) - exact) / _se_mean(mc)


def test_criterion_11_exact_oracle(bern):
    zs = {}
    for D in (1.0, 1.2):
        ex = exact_sprt_cycle(bern, D)
        cyc = sample_sprt_cycles(bern, D, "pre_change", 200_000, seed=1111)
        zs[f"lambda@{D}"] = _z(cyc.lam.astype(float), ex.mean_lambda)
        zs[f"p_below@{D}"] = _z(cyc.below.astype(float), ex.p_below)
        res = simulate(CuSum(D), bern, Deterministic(math.inf), 100_000, seed=1112)
        zs[f"tau_C@{D}"] = _z(res.tau.astype(float), exact_cusum_arl(bern, D))
        n = 20
        for mu, h in ((0.1, math.inf), (0.2, 0.5)):
            exact = exact_decusum_pdc(bern, D, mu, h, n)
            r = simulate(DECuSum(D, mu, h), bern, Deterministic(math.inf), 200_000, seed=1113, cap=n - 1,
                         checkpoints=(n - 1,))
            alive = r.ck_alive[:, 0]
            zs[f"PDC@{D},mu={mu},h={h}"] = _z(r.ck_obs[alive, 0] / (n - 1), exact)
    worst = max(zs, key=zs.get)
    record(11, max(zs.values()) <= 5, f"{len(zs)} quantities, max |z| = {zs[worst]:.2f} ({worst})")


def _interp_add(rows, log_pfa):
    x = np.log([r[1] for r in rows])
    order = np.argsort(x)
    add = np.interp(log_pfa, x[order], np.array([r[0] for r in rows])[order])
    se = np.interp(log_pfa, x[order], np.array([r[2] for r in rows])[order])
    return add, se


def test_criterion_12_bayesian_suite(gauss08):
    rho, target = 0.01, 50.0
    As = (0.9, 0.95, 0.99, 0.995, 0.999)
    fam: dict[str, list[tuple[float, float, float]]] = {"shiryaev": [], "deshiryaev": [], "fractional": []}
    pfa_ok, pfa_lines = True, []
    for k, A in enumerate(As):
        seed = 1212 + k
        B = calibrate_lower_threshold(gauss08, A, rho, target, n_trials=10_000, seed=seed).value
        for name, pol in (("shiryaev", Shiryaev(A, rho)), ("deshiryaev", DEShiryaev(A, rho, B)),
                          ("fractional", FractionalSampling(Shiryaev(A, rho), target / (1 / rho - 1)))):
            est = estimate_bayes(pol, gauss08, rho, 20_000, seed=seed + 100)
            fam[name].append((est.add.value, max(est.pfa.value, 1e-6), est.add.std_error))
            if name == "deshiryaev":
                ok = est.pfa.value <= (1 - A) + 2 * est.pfa.std_error
                pfa_ok &= ok
                pfa_lines.append(f"A={A}: PFA {est.pfa.value:.4f} ANO {est.ano.value:.1f}")
    lo = max(min(r[1] for r in rows) for rows in fam.values())
    hi = min(max(r[1] for r in rows) for rows in fam.values())
    grid = np.linspace(math.log(lo), math.log(hi), 5)
    s, s_se = _interp_add(fam["shiryaev"], grid)
    d, d_se = _interp_add(fam["deshiryaev"], grid)
    f, f_se = _interp_add(fam["fractional"], grid)
    between = np.all(s <= d + 2 * np.hypot(s_se, d_se)) and np.all(d + 2 * np.hypot(d_se, f_se) < f)
    nearer = np.all(d - s < f - d)
    ordering = f"ADD at matched PFA: S {np.round(s, 1).tolist()} DE {np.round(d, 1).tolist()} FS {np.round(f, 1).tolist()}"
    record(12, pfa_ok and between and nearer,
           f"PFA<=1-A: {pfa_ok} ({'; '.join(pfa_lines)}); between={bool(between)}, nearer_shiryaev={bool(nearer)}; "
           + ordering)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
