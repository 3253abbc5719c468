"""Command-line runner.

Subcommands:

- ``run <config>``: execute one run file and print where its results went.
- ``verify <golden_dir>``: re-run the bundled configs (or ``--config`` files)
  and compare their peak tables with the goldens; ``--update`` rewrites them.
- ``schema``: print the run-file schema as JSON.

Usage:
    From the repo root after ``poetry install``::

        python -m nanonmr2d.scripts.nmr2d run nanonmr2d/configs/coupled_pair.toml
        python -m nanonmr2d.scripts.nmr2d verify tests/golden --update
        python -m nanonmr2d.scripts.nmr2d schema

    Failures print one JSON error record on stderr. Exit codes: 0 success,
    1 failed run or verification, 2 invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Optional

from nanonmr2d.config import (
    ProcessingConfig,
    config_schema,
    load_experiment_config,
    load_processing_defaults,
    load_species_table,
)
from nanonmr2d.errors import PipelineError
from nanonmr2d.pipeline import run_pipeline, verify
from nanonmr2d.spins import DEFAULT_SPECIES, SpinSpecies

# config.toml at repository root (3 levels up from this file)
CONFIG_PATH = Path(__file__).resolve().parent.parent.parent / "config.toml"

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2


def _error(kind: str, message: str, **extra: str) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)


def _species_table(path: Optional[Path]) -> Mapping[str, SpinSpecies]:
    if path is not None:
        return load_species_table(path)
    return load_species_table(CONFIG_PATH) if CONFIG_PATH.exists() else DEFAULT_SPECIES


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmr2d", description="2D nanoscale NMR simulation and inversion.")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Execute one run configuration.")
    run.add_argument("config", type=Path)
    run.add_argument("--output-dir", type=Path, default=None, help="Overrides run.output_dir.")
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--species-table", type=Path, default=None)

    ver = sub.add_parser("verify", help="Compare bundled runs with golden peak tables.")
    ver.add_argument("golden_dir", type=Path)
    ver.add_argument("--config", type=Path, action="append", default=None, help="Run file (repeatable).")
    ver.add_argument("--update", action="store_true", help="Rewrite the goldens.")
    ver.add_argument("--workers", type=int, default=None)
    ver.add_argument("--species-table", type=Path, default=None)

    sub.add_parser("schema", help="Print the run-file schema.")
    return parser


def _run(args: argparse.Namespace) -> int:
    try:
        species = _species_table(args.species_table)
        defaults = load_processing_defaults(CONFIG_PATH) if CONFIG_PATH.exists() else ProcessingConfig()
        config = load_experiment_config(args.config, defaults)
    except (FileNotFoundError, ValueError) as exc:
        _error("config", str(exc))
        return EXIT_INVALID
    try:
        result = run_pipeline(config, species, args.output_dir, args.workers)
    except PipelineError as exc:
        _error("pipeline", exc.detail, stage=exc.stage)
        return EXIT_FAILED
    summary = result.report["summary"]
    print(f"Run '{config.run.name}' written to {result.run_dir}")
    print(f"  peaks: {summary['n_peaks']}")
    if "n_cross" in summary:
        print(f"  cross peaks: {summary['n_cross']} (ratio {summary['cross_ratio']:.3g})")
    for check in result.report["checks"]:
        print(f"  check {check['name']}: {'ok' if check['passed'] else 'FAILED'}")
    return EXIT_OK


def _verify(args: argparse.Namespace) -> int:
    try:
        species = _species_table(args.species_table)
        report = verify(args.golden_dir, args.config, args.update, species, args.workers)
    except (FileNotFoundError, ValueError) as exc:
        _error("config", str(exc))
        return EXIT_INVALID
    for name in report.updated:
        print(f"updated golden: {name}")
    for name in report.compared:
        print(f"compared: {name}")
    if not report.passed:
        _error("verify", f"{len(report.deviations)} deviation(s)", deviations="; ".join(report.deviations))
        return EXIT_FAILED
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point: parse arguments, dispatch the subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.command == "schema":
        print(json.dumps(config_schema(), indent=2, sort_keys=True))
        return EXIT_OK
    if args.command == "run":
        return _run(args)
    return _verify(args)


if __name__ == "__main__":
    sys.exit(main())
