"""Command-line entry point: run, validate, and sweep scenarios.

Exit codes: 0 success, 1 invalid config, 2 runtime error, 3 inconclusive
protocol outcome.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np
import yaml

from .config import (
    EXIT_INVALID_CONFIG,
    EXIT_OK,
    EXIT_RUNTIME_ERROR,
    ScenarioConfig,
    load_config,
    run_scenario,
    validate_config,
)
from .errors import ConfigError


def _load(path: str) -> ScenarioConfig:
    try:
        return load_config(path)
    except (ConfigError, OSError, ValueError, yaml.YAMLError) as exc:
        print(json.dumps({"diagnostics": [{
            "field": "config", "constraint": "loadable YAML mapping",
            "observed": str(exc), "severity": "error"}]}))
        raise SystemExit(EXIT_INVALID_CONFIG)


def _apply_overrides(config: ScenarioConfig, args) -> ScenarioConfig:
    if args.quantum_seed is not None:
        config.seeds["quantum"] = args.quantum_seed
    if args.channel_seed is not None:
        config.seeds["channel"] = args.channel_seed
    return config


def cmd_run(args) -> int:
    config = _apply_overrides(_load(args.config), args)
    code, record = run_scenario(config, output_dir=args.output_dir)
    print(json.dumps(record, sort_keys=True))
    return code


def cmd_validate(args) -> int:
    config = _load(args.config)
    diags = validate_config(config)
    print(json.dumps({"diagnostics": [d.to_dict() for d in diags]}, sort_keys=True))
    return EXIT_INVALID_CONFIG if any(d.severity == "error" for d in diags) else EXIT_OK


def cmd_sweep(args) -> int:
    """Run one scenario per value of a swept field, with derived independent
    seeds per cell, and merge a summary CSV in cell-index order."""
    config = _load(args.config)
    _apply_overrides(config, args)
    try:
        values = json.loads(args.values)
    except json.JSONDecodeError as exc:
        print(json.dumps({"diagnostics": [{
            "field": "--values", "constraint": "a JSON list", "observed": str(exc),
            "severity": "error"}]}))
        return EXIT_INVALID_CONFIG
    if not isinstance(values, list) or not values:
        print(json.dumps({"diagnostics": [{
            "field": "--values", "constraint": "a non-empty JSON list",
            "observed": values, "severity": "error"}]}))
        return EXIT_INVALID_CONFIG

    out_dir = args.output_dir or config.output_dir
    if out_dir is None:
        print(json.dumps({"diagnostics": [{
            "field": "output_dir", "constraint": "required", "observed": None,
            "severity": "error"}]}))
        return EXIT_INVALID_CONFIG
    os.makedirs(out_dir, exist_ok=True)

    q_children = np.random.SeedSequence(int(config.seeds["quantum"])).spawn(len(values))
    c_children = np.random.SeedSequence(int(config.seeds["channel"])).spawn(len(values))
    rows = []
    worst = EXIT_OK
    for i, value in enumerate(values):
        cell = ScenarioConfig.from_dict(config.to_dict())
        _set_dotted(cell, args.param, value)
        cell.seeds = dict(cell.seeds)
        cell.seeds["quantum"] = int(q_children[i].generate_state(1)[0])
        cell.seeds["channel"] = int(c_children[i].generate_state(1)[0])
        cell_dir = os.path.join(out_dir, f"cell_{i:03d}")
        code, record = run_scenario(cell, output_dir=cell_dir)
        worst = max(worst, code)
        rows.append({"cell": i, "param": args.param, "value": value,
                     "exit_code": code,
                     "status": record.get("status"),
                     "sync_error": record.get("sync_error")})

    with open(os.path.join(out_dir, "sweep_summary.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["cell", "param", "value",
                                                "exit_code", "status", "sync_error"])
        writer.writeheader()
        writer.writerows(rows)
    print(json.dumps({"cells": rows}, sort_keys=True))
    return worst


def _set_dotted(config: ScenarioConfig, path: str, value) -> None:
    parts = path.split(".")
    target = config
    for p in parts[:-1]:
        target = getattr(target, p) if not isinstance(target, dict) else target[p]
    if isinstance(target, dict):
        target[parts[-1]] = value
    else:
        if not hasattr(target, parts[-1]):
            raise ConfigError(f"unknown config field {path!r}")
        setattr(target, parts[-1], value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qclocksync",
        description="Simulate entanglement-based quantum clock synchronization scenarios.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="scenario YAML file")
        p.add_argument("--output-dir", "-o", default=None)
        p.add_argument("--quantum-seed", type=int, default=None)
        p.add_argument("--channel-seed", type=int, default=None)

    p_run = sub.add_parser("run", help="run one scenario and write artifacts")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="check a scenario without running it")
    p_val.add_argument("config")
    p_val.set_defaults(func=cmd_validate)

    p_sweep = sub.add_parser("sweep", help="run a scenario grid over one field")
    common(p_sweep)
    p_sweep.add_argument("--param", required=True,
                         help="dotted config field to sweep, e.g. 'delta'")
    p_sweep.add_argument("--values", required=True, help="JSON list of values")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        print(json.dumps({"diagnostics": [{
            "field": "config", "constraint": str(exc), "observed": None,
            "severity": "error"}]}))
        return EXIT_INVALID_CONFIG
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
