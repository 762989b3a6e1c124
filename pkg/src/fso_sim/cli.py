"""``fso-sim`` command line.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from .config import ConfigError
from .harness import emit_plot_data, parse_config, read_summary_csv, run_grid

log = logging.getLogger("fso_sim")

SEED_ENV = "FSO_SIM_SEED"


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise ValueError(f"seed out of 64-bit range: {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fso-sim", description="FSO vs. traditional vs. perfect-oracle dispatch simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment grid")
    r.add_argument("--config", required=True, help="grid/world config file (empty file = default grid)")
    r.add_argument("--out", required=True, help="per-run results CSV")
    r.add_argument("--summary", required=True, help="per-cell summary CSV")
    r.add_argument("--parallel", type=int, default=1, help="worker processes")
    r.add_argument("--log", default=None, help="write the protocol/lifecycle event log here")
    r.add_argument("--seed", default=None, help=f"master seed (overrides ${SEED_ENV} and the config)")

    pl = sub.add_parser("plot", help="turn a summary CSV into per-threshold data tables")
    pl.add_argument("--summary", required=True)
    pl.add_argument("--outdir", required=True)
    return p


def _cmd_run(args) -> int:
    try:
        grid = parse_config(args.config)
        seed_text = args.seed if args.seed is not None else os.environ.get(SEED_ENV)
        if seed_text is not None:
            try:
                grid = dataclasses.replace(grid, master_seed=_u64(seed_text))
            except ValueError as exc:
                raise ConfigError("seed", str(exc)) from None
        if args.parallel < 1:
            raise ConfigError("parallel", "must be >= 1")
    except (ConfigError, FileNotFoundError) as exc:
        log.error("config error: %s", exc)
        return 1
    try:
        runs, summary = run_grid(grid, args.parallel, args.out, args.summary, args.log)
    except Exception as exc:
        log.error("run failed: %s", exc)
        return 2
    log.info("%d runs, %d summary rows -> %s, %s", len(runs), len(summary), args.out, args.summary)
    return 0


def _cmd_plot(args) -> int:
    try:
        rows = read_summary_csv(args.summary)
        paths = emit_plot_data(rows, args.outdir)
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return 1
    except (ValueError, KeyError) as exc:
        log.error("plot failed: %s", exc)
        return 2
    for p in paths:
        log.info("wrote %s", p)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_plot(args)


if __name__ == "__main__":
    sys.exit(main())
