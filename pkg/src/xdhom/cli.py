"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness
from .errors import (
    CoefficientError,
    ConfigError,
    GeometryError,
    InputError,
    ParameterError,
    ResolutionError,
    RunError,
    SolverError,
    StepError,
)

_CONFIG_ERRORS = (
    ConfigError,
    ParameterError,
    GeometryError,
    ResolutionError,
    CoefficientError,
    InputError,
)
_SOLVER_ERRORS = (SolverError, StepError, RunError)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="xdhom",
        description="Numerical homogenization of degenerate cross-diffusion systems",
    )
    sub = p.add_subparsers(dest="command", required=True)

    cell = sub.add_parser("cell", help="solve cell problems, emit correctors + tensor")
    cell.add_argument("--config", required=True)
    cell.add_argument("--out", required=True)

    eff = sub.add_parser("effective", help="effective tensor at a given state")
    eff.add_argument("--config", required=True)
    eff.add_argument("--state", required=True, help="JSON file with {\"u\": [...]}")
    eff.add_argument("--out", required=True)

    macro = sub.add_parser("macro", help="transient run of the homogenized system")
    macro.add_argument("--config", required=True)
    macro.add_argument("--out", required=True)

    micro = sub.add_parser("micro", help="transient run of the oscillating system")
    micro.add_argument("--config", required=True)
    micro.add_argument("--eps", required=True, type=float)
    micro.add_argument("--out", required=True)

    sweep = sub.add_parser("sweep", help="eps-convergence study")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--out", required=True)

    check = sub.add_parser("check", help="assumption report for a model (JSON to stdout)")
    check.add_argument("--model", required=True)
    check.add_argument("--params", help="JSON file with model parameters")
    check.add_argument("--samples", type=int, default=1000)
    check.add_argument("--seed", type=int, default=0)
    return p


def _read_state(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "u" not in doc:
        raise ConfigError("state file must be a JSON object with a 'u' array")
    return np.asarray(doc["u"], dtype=float)


def _dispatch(args) -> int:
    if args.command == "cell":
        cfg = harness.load_config(args.config)
        result = harness.run_cell(cfg)
        harness.emit_report(result["solution"], args.out)
        harness.emit_report(result["tensor"], args.out)
    elif args.command == "effective":
        cfg = harness.load_config(args.config)
        state = _read_state(args.state)
        tensor = harness.run_effective(cfg, state)
        harness.emit_report(tensor, args.out)
    elif args.command == "macro":
        cfg = harness.load_config(args.config)
        final, log = harness.run_macro(cfg)
        harness.emit_report(log, args.out)
        harness.emit_report(final, args.out)
    elif args.command == "micro":
        cfg = harness.load_config(args.config)
        final, log = harness.run_micro(cfg, args.eps)
        harness.emit_report(log, args.out)
        harness.emit_report(final, args.out)
    elif args.command == "sweep":
        cfg = harness.load_config(args.config)
        report = harness.eps_sweep(cfg)
        harness.emit_report(report, args.out)
    elif args.command == "check":
        params = None
        if args.params:
            with open(args.params, "r", encoding="utf-8") as fh:
                params = json.load(fh)
        report = harness.run_check(args.model, params, args.samples, args.seed)
        sys.stdout.write(report.to_json() + "\n")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except _CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        path = getattr(exc, "filename", None)
        where = f" ({path})" if path else ""
        print(f"I/O error{where}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
