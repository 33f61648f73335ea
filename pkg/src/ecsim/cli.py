"""Experiment runner CLI.

Subcommands: threshold (closed-form security threshold), simulate (run one
config's trials, emit traces and a summary row), sweep (grid of configs, one
summary row per cell), detect-nakamoto (read a trace CSV, emit the flagged
epochs as JSON). Identical configs produce byte-identical outputs. Exit
codes: 0 success, 1 validation error, 2 internal assertion.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .analysis import (NoRoot, detect_nakamoto, run_checked_trial, series_from_counts,
                       solve_threshold, summarize_cell, summary_csv_lines, sweep)
from .config import ConfigError, load_config, load_grid
from .election import BadParameters
from .netsim import TRACE_COLUMNS, TRACE_SCHEMA


def _write_lines(path: str, lines) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def read_trace_csv(path: str):
    """Trace CSV back into per-column numpy arrays (epoch-indexed from 1)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("# schema:"):
        raise ConfigError(f"trace: {path} lacks a schema header")
    header = lines[1].split(",")
    if tuple(header) != TRACE_COLUMNS:
        raise ConfigError(f"trace: unexpected columns in {path}")
    rows = [tuple(int(v) for v in ln.split(",")) for ln in lines[2:]]
    cols = {name: np.array([row[i] for row in rows], dtype=np.int64)
            for i, name in enumerate(TRACE_COLUMNS)}
    return cols


def cmd_threshold(args) -> int:
    beta = solve_threshold(args.m, args.variant)
    print(f"{beta:.6f}")
    return 0


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.emit_traces:
        out["emit_traces"] = True
    return out


def cmd_simulate(args) -> int:
    config = load_config(args.config, _overrides(args))
    results = []
    for trial in range(config.trials):
        result, trace = run_checked_trial(config, trial, keep_trace=config.emit_traces)
        results.append(result)
        if trace is not None:
            _write_lines(os.path.join(config.output, f"trace_{trial:04d}.csv"),
                         trace.csv_lines())
    row = summarize_cell(config, results)
    _write_lines(os.path.join(config.output, "summary.csv"), summary_csv_lines([row]))
    print(f"wrote {config.output}/summary.csv"
          + (f" and {config.trials} trace files" if config.emit_traces else ""))
    return 0


def cmd_sweep(args) -> int:
    configs = load_grid(args.config, _overrides(args))
    rows = sweep(configs, jobs=args.jobs)
    out = configs[0].output if configs else "out"
    _write_lines(os.path.join(out, "summary.csv"), summary_csv_lines(rows))
    print(f"wrote {out}/summary.csv ({len(rows)} rows)")
    return 0


def cmd_detect_nakamoto(args) -> int:
    cols = read_trace_csv(args.trace)
    series = series_from_counts(
        np.concatenate(([0], cols["H"])), np.concatenate(([0], cols["Z"])),
        np.concatenate(([1], cols["W_min"])), np.concatenate(([1], cols["W_max"])))
    horizon = args.horizon if args.horizon is not None else series.last_epoch
    report = detect_nakamoto(series, horizon)
    payload = {
        "schema": "ecsim.nakamoto.v1",
        "horizon": report.horizon,
        "epochs": report.epochs,
        "witnesses": {str(s): report.witnesses[s] for s in report.epochs},
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        _write_lines(args.out, [text])
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecsim",
        description="Deterministic tipset-consensus simulator and analysis toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("threshold", help="solve beta m = c (1 - e^{-(1-beta)m})")
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--variant", choices=["tiebreak", "notiebreak"], default="tiebreak")
    p.set_defaults(func=cmd_threshold)

    for name, func in (("simulate", cmd_simulate), ("sweep", cmd_sweep)):
        p = sub.add_parser(name, help=f"{name} from a config file")
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--emit-traces", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("detect-nakamoto", help="flag Nakamoto epochs in a trace file")
    p.add_argument("--trace", required=True)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_detect_nakamoto)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, BadParameters, NoRoot, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AssertionError as exc:
        print(f"internal assertion: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
