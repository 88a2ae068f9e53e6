"""Command line driver: ``vem-sf run --experiment <name> ...``."""
from __future__ import annotations

import argparse
import json
import os
import sys

from .experiments import (CSV_COLUMNS, EXPERIMENTS, ConfigError, ExperimentConfig,
                          InfeasibleError, run_experiment, write_report)
from .mesh import FAMILIES
from .system import METHODS, SolverError, SpectrumError


def _split(values):
    out = []
    for v in values or []:
        out.extend(p for p in str(v).split(",") if p)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vem-sf", description="Stabilization-free VEM experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment and write CSV/JSON reports")
    run.add_argument("--config", help="JSON file with the same keys as the options")
    run.add_argument("--experiment", choices=EXPERIMENTS)
    run.add_argument("--method", nargs="+", help=f"methods from {sorted(METHODS)} (space or comma separated)")
    run.add_argument("--k", nargs="+", help="polynomial degrees")
    run.add_argument("--mesh", choices=FAMILIES)
    run.add_argument("--levels", type=int)
    run.add_argument("--alpha", type=float)
    run.add_argument("--out")
    run.add_argument("--threads", type=int)
    run.add_argument("--quad-exactness", type=int)
    run.add_argument("--zero-threshold", type=float)
    run.add_argument("--interior-basis", choices=("monomial", "orthonormal"))
    run.add_argument("--max-dofs", type=int)
    run.add_argument("--format", nargs="+", default=["csv", "json"], choices=("csv", "json"))
    return parser


def config_from_args(args) -> ExperimentConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    if args.method:
        data["methods"] = _split(args.method)
    if args.k:
        try:
            data["ks"] = [int(k) for k in _split(args.k)]
        except ValueError as exc:
            raise ConfigError(f"bad --k value: {exc}") from exc
    for key in ("experiment", "mesh", "levels", "alpha", "out", "threads", "quad_exactness",
                "zero_threshold", "interior_basis", "max_dofs"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    if "threads" not in data and os.environ.get("VEMSF_THREADS"):
        data["threads"] = int(os.environ["VEMSF_THREADS"])
    return ExperimentConfig.from_dict(data)


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def print_summary(report, stream=None):
    stream = stream or sys.stdout
    cols = [c for c in CSV_COLUMNS if any(getattr(r, c) is not None for r in report.records)]
    print(" ".join(f"{c:>11}" for c in cols + ["label"]), file=stream)
    for r in report.records:
        label = ",".join(f"{k}={_fmt(v)}" for k, v in r.label.items())
        print(" ".join(f"{_fmt(getattr(r, c)):>11}" for c in cols) + f" {label}", file=stream)
    for fit in report.fits:
        print(f"fit {fit['method']} k={fit['k']}: rate_l2={_fmt(fit['rate_l2'])} "
              f"rate_grad={_fmt(fit['rate_grad'])}", file=stream)
    for t in report.timing_ratios:
        print(f"timing n={t['n']} k={t['k']}: slowest {t['slowest']}", file=stream)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
        report = run_experiment(config)
        paths = write_report(report, args.format)
    except InfeasibleError as exc:
        print(f"vem-sf: refused: {exc} (estimate {exc.estimate})", file=sys.stderr)
        return 3
    except (ConfigError, SolverError, SpectrumError, OSError, json.JSONDecodeError) as exc:
        print(f"vem-sf: error: {exc}", file=sys.stderr)
        return 2
    print_summary(report)
    for p in paths:
        print(f"wrote {p}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
