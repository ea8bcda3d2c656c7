from __future__ import annotations

import json
import math
from pathlib import Path

import pytest

from qcdlab.cli import EXIT_CONFIG, EXIT_OK, EXIT_POISONED, main
from qcdlab.renewal import CycleStats
from qcdlab.results import read_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL_TRIALS = """
[trials]
far = 400
cadd = 300
pdc = 1000
bayes = 400
cycles = 2000
cadd_n_max = 3
pdc_grid = [100, 200, 300, 400, 500]
"""


def _write(tmp_path: Path, name: str, text: str) -> Path:
    p = tmp_path / name
    p.write_text(text)
    return p


def _run(*args) -> int:
    return main([str(a) for a in args])


def test_simulate_fig3_truncated_trace(tmp_path):
    assert _run("simulate", "--config", CONFIGS / "fig3.toml", "--out", tmp_path) == EXIT_OK
    header, rows = read_csv(tmp_path / "fig3.trace.csv")
    assert header["command"] == "simulate" and len(header["config_hash"]) == 16
    assert len(rows) == 300
    assert min(float(r["statistic"]) for r in rows) >= -0.5


def test_simulate_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert _run("simulate", "--config", CONFIGS / "fig3.toml", "--out", out) == EXIT_OK
    assert (a / "fig3.trace.csv").read_bytes() == (b / "fig3.trace.csv").read_bytes()


def test_simulate_fig1_posterior_trace(tmp_path):
    assert _run("simulate", "--config", CONFIGS / "fig1.toml", "--out", tmp_path) == EXIT_OK
    _, rows = read_csv(tmp_path / "fig1.trace.csv")
    prev = 0.0
    for r in rows:
        p = float(r["statistic"])
        assert 0.0 <= p <= 1.0
        assert int(r["M"]) == (1 if prev >= 0.2 else 0)
        prev = p


def test_simulate_h0_matches_cusum(tmp_path):
    base = 'name = "{n}"\nseed = 9\n[simulate]\nsteps = 200\nchange_point = {{kind = "deterministic", gamma = 60}}\n'
    de = _write(tmp_path, "de.toml", base.format(n="de") + 'detector = {family = "decusum", D = 5.0, mu = 0.2, h = 0.0}\n')
    cu = _write(tmp_path, "cu.toml", base.format(n="cu") + 'detector = {family = "cusum", D = 5.0}\n')
    assert _run("simulate", "--config", de, "--out", tmp_path) == EXIT_OK
    assert _run("simulate", "--config", cu, "--out", tmp_path) == EXIT_OK
    assert read_csv(tmp_path / "de.trace.csv")[1] == read_csv(tmp_path / "cu.trace.csv")[1]


def test_invalid_config_names_field(tmp_path, capsys):
    bad = _write(tmp_path, "bad.toml", '[simulate]\ndetector = {family = "decusum", D = -7.0, mu = 0.1}\n')
    assert _run("simulate", "--config", bad, "--out", tmp_path) == EXIT_CONFIG
    assert "simulate.detector.D" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    bad = _write(tmp_path, "bad.toml", 'seeed = 3\n')
    assert _run("table2", "--config", bad) == EXIT_CONFIG
    assert "seeed" in capsys.readouterr().err


def test_missing_section_is_config_error(tmp_path):
    cfg = _write(tmp_path, "empty.toml", 'name = "x"\n')
    assert _run("simulate", "--config", cfg, "--out", tmp_path) == EXIT_CONFIG


def test_missing_file_is_config_error(tmp_path):
    assert _run("simulate", "--config", tmp_path / "nope.toml") == EXIT_CONFIG


def test_seed_override_changes_hash(tmp_path):
    assert _run("simulate", "--config", CONFIGS / "fig3.toml", "--out", tmp_path / "a") == EXIT_OK
    assert _run("simulate", "--config", CONFIGS / "fig3.toml", "--out", tmp_path / "b", "--seed", 41) == EXIT_OK
    ha = read_csv(tmp_path / "a" / "fig3.trace.csv")[0]
    hb = read_csv(tmp_path / "b" / "fig3.trace.csv")[0]
    assert ha["config_hash"] != hb["config_hash"] and hb["seed"] == "41"


def test_table2_small(tmp_path):
    cfg = _write(tmp_path, "t2.toml", 'name = "t2"\nseed = 3\n' + SMALL_TRIALS +
                 '[table2]\nD_values = [6.0]\nmu_values = [0.6]\n')
    code = _run("table2", "--config", cfg, "--out", tmp_path)
    assert code in (EXIT_OK, EXIT_POISONED)
    header, rows = read_csv(tmp_path / "t2.table2.csv")
    assert header["command"] == "table2" and len(rows) == 2
    assert {r["sub_table"] for r in rows} == {"a", "b"}
    b = next(r for r in rows if r["sub_table"] == "b")
    assert float(b["pdc_approx"]) == pytest.approx(0.6 / 0.88125)
    assert code == (EXIT_POISONED if any(r["poisoned"] == "1" for r in rows) else EXIT_OK)


def test_tradeoff_independent_of_threads(tmp_path):
    text = ('name = "tr"\nseed = 4\n' + SMALL_TRIALS +
            '[tradeoff]\nthresholds = [2.0, 3.0]\nfamilies = [{family = "cusum"}, '
            '{family = "decusum", mu = 0.3, h = 0.5}, {family = "fractional-cusum", beta = 0.5}]\n')
    cfg = _write(tmp_path, "tr.toml", text)
    _run("tradeoff", "--config", cfg, "--out", tmp_path / "one")
    _run("tradeoff", "--config", cfg, "--out", tmp_path / "two", "--threads", 2)
    one = (tmp_path / "one" / "tr.tradeoff.csv").read_bytes()
    assert one == (tmp_path / "two" / "tr.tradeoff.csv").read_bytes()
    _, rows = read_csv(tmp_path / "one" / "tr.tradeoff.csv")
    assert [r["family"] for r in rows] == ["cusum"] * 2 + ["decusum"] * 2 + ["fractional-cusum"] * 2
    assert all(r["pdc"] == "1" for r in rows if r["family"] == "cusum")


def test_bayes_tradeoff_small(tmp_path):
    text = ('name = "by"\nseed = 5\n' + SMALL_TRIALS +
            '[pair]\nf0 = {kind = "gaussian", mean = 0.0, var = 1.0}\nf1 = {kind = "gaussian", mean = 0.8, var = 1.0}\n'
            '[tradeoff]\nsetting = "bayes"\nrho = 0.01\nano_target = 50.0\nbudget = 6\ntolerance = 0.2\n'
            'thresholds = [0.9]\nfamilies = [{family = "shiryaev"}, {family = "fractional-shiryaev"}]\n')
    cfg = _write(tmp_path, "by.toml", text)
    assert _run("tradeoff", "--config", cfg, "--out", tmp_path) in (EXIT_OK, EXIT_POISONED)
    _, rows = read_csv(tmp_path / "by.tradeoff.csv")
    fs = next(r for r in rows if r["family"] == "fractional-shiryaev")
    assert float(fs["beta"]) == pytest.approx(50 / 99)


def test_calibrate_beta_one_degenerates_to_cusum(tmp_path):
    cfg = _write(tmp_path, "c.toml", 'name = "c"\n' + SMALL_TRIALS + '[calibrate]\nalpha = 0.5\nbeta = 1.0\n')
    assert _run("calibrate", "--config", cfg, "--out", tmp_path) in (EXIT_OK, EXIT_POISONED)
    rec = json.loads((tmp_path / "c.design.json").read_text())
    assert rec["mu"] == "inf" and rec["family"] == "cusum"
    assert rec["D"] == pytest.approx(math.log(2))
    assert rec["verified_pdc"] == 1.0
    assert set(rec) >= {"alpha", "beta", "h", "D", "mu", "verified_far", "verified_pdc", "seeds", "config_hash"}


def test_cycle_stats_output(tmp_path):
    cfg = _write(tmp_path, "cs.toml", 'name = "cs"\n' + SMALL_TRIALS + '[cycle-stats]\nh = 0.5\n')
    assert _run("cycle-stats", "--config", cfg, "--out", tmp_path) == EXIT_OK
    st = CycleStats.from_json((tmp_path / "cs.cycle_stats.json").read_text())
    assert st.h == 0.5 and st.n_trials == 2000


def test_example_configs_validate():
    from qcdlab.config import load_config

    for p in sorted(CONFIGS.glob("*.toml")):
        load_config(p)
