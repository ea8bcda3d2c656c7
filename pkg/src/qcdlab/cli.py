"""Command-line experiment runner.

    qcdlab simulate    --config fig3.toml --out results/
    qcdlab table2      --out results/
    qcdlab tradeoff    --config fig5.toml --threads 4
    qcdlab calibrate   --config design.toml
    qcdlab cycle-stats --config pair.toml

Exit status: 0 when every output row is reliable, 1 when any row was
flagged (poisoned), 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from qcdlab import experiments
from qcdlab.config import ConfigError, ExperimentConfig, load_config, parse_config
from qcdlab.results import atomic_write_text, write_csv, write_json

log = logging.getLogger("qcdlab")

EXIT_OK, EXIT_POISONED, EXIT_CONFIG = 0, 1, 2


def _header(cfg: ExperimentConfig, command: str) -> dict[str, object]:
    return {"command": command, "name": cfg.name, "config_hash": cfg.config_hash, "seed": cfg.seed}


def _out_path(cfg: ExperimentConfig, suffix: str) -> Path:
    return Path(cfg.out) / f"{cfg.name}.{suffix}"


def cmd_simulate(cfg: ExperimentConfig) -> int:
    trace = experiments.run_simulate(cfg)
    path = _out_path(cfg, "trace.csv")
    atomic_write_text(path, trace.to_csv(_header(cfg, "simulate") | {"tau": trace.tau, "censored": trace.censored}))
    log.info("wrote %s (tau=%s, observations=%d)", path, trace.tau, trace.observations_used)
    return EXIT_OK


def _write_table(cfg: ExperimentConfig, command: str, table: experiments.Table) -> int:
    path = _out_path(cfg, f"{command}.csv")
    write_csv(path, _header(cfg, command), table.columns, table.rows)
    for row in table.rows:
        if row.get("poisoned"):
            log.warning("poisoned row %s: %s", {k: row.get(k) for k in table.columns[:4]}, row.get("flags"))
    log.info("wrote %s (%d rows)", path, len(table.rows))
    return EXIT_POISONED if table.poisoned else EXIT_OK


def cmd_table2(cfg: ExperimentConfig) -> int:
    return _write_table(cfg, "table2", experiments.run_table2(cfg))


def cmd_tradeoff(cfg: ExperimentConfig) -> int:
    return _write_table(cfg, "tradeoff", experiments.run_tradeoff(cfg))


def cmd_calibrate(cfg: ExperimentConfig) -> int:
    record = experiments.run_calibrate(cfg)
    record["seed"] = cfg.seed
    path = _out_path(cfg, "design.json")
    write_json(path, record)
    if record["poisoned"]:
        log.warning("design record flagged: %s", ", ".join(record["flags"]))
    log.info("wrote %s (D=%.6g, mu=%s)", path, record["D"], record["mu"])
    return EXIT_POISONED if record["poisoned"] else EXIT_OK


def cmd_cycle_stats(cfg: ExperimentConfig) -> int:
    stats = experiments.run_cycle_stats(cfg)
    path = _out_path(cfg, "cycle_stats.json")
    atomic_write_text(path, stats.to_json())
    log.info("wrote %s", path)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "tradeoff": cmd_tradeoff,
    "table2": cmd_table2,
    "calibrate": cmd_calibrate,
    "cycle-stats": cmd_cycle_stats,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcdlab", description="Quickest change detection experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="TOML or JSON experiment config")
        p.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
        p.add_argument("--threads", type=int, help="worker processes (results do not depend on this)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        overrides = {k: v for k, v in (("seed", args.seed), ("threads", args.threads)) if v is not None}
        if args.out is not None:
            overrides["out"] = str(args.out)
        if overrides:
            cfg = parse_config(cfg.model_dump(mode="json", by_alias=True) | overrides)
    except (ConfigError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg)
    except (ValueError, TypeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
