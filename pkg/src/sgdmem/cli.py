"""Command-line entry points.

Verbs:
    sgdmem run <config.toml>               execute an experiment config
    sgdmem stability-scan <config.toml>    (delta, alpha_eff, q0) grid scan
    sgdmem propagators <config.toml>       propagator series + sums
    sgdmem fit <trajectory.csv> --window a:b   power-law exponent fit

All outputs are CSV/JSON; no plots are rendered.  The exit code of ``run``
is nonzero iff a declared expectation fails.
"""

from __future__ import annotations

import argparse
import json
import sys

from .evolution import LossTrajectory
from .experiments import (
    ConfigError,
    load_config,
    propagators_report,
    run_experiment,
    stability_scan,
)
from .fitting import fit_exponent


def _parse_window(text):
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must be 'a:b', got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgdmem", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", default=None)

    p_scan = sub.add_parser("stability-scan", help="memory-1 stability grid scan")
    p_scan.add_argument("config")
    p_scan.add_argument("--output", default=None)

    p_prop = sub.add_parser("propagators", help="propagator series and sums")
    p_prop.add_argument("config")
    p_prop.add_argument("--output-dir", default=None)

    p_fit = sub.add_parser("fit", help="fit a power-law exponent to a CSV trajectory")
    p_fit.add_argument("csv")
    p_fit.add_argument("--window", type=_parse_window, default=None)
    p_fit.add_argument("--ratio", type=float, default=1.05)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "run":
            summary = run_experiment(load_config(args.config), args.output_dir)
            json.dump(summary, sys.stdout, indent=2)
            print()
            return 0 if summary["ok"] else 1
        if args.verb == "stability-scan":
            rows = stability_scan(load_config(args.config), args.output)
            print(f"wrote {len(rows)} grid points")
            return 0
        if args.verb == "propagators":
            summary = propagators_report(load_config(args.config), args.output_dir)
            json.dump(summary, sys.stdout, indent=2)
            print()
            return 0
        if args.verb == "fit":
            traj = LossTrajectory.from_csv(args.csv)
            fit = fit_exponent(traj, window=args.window, ratio=args.ratio)
            json.dump(fit.as_dict(), sys.stdout, indent=2)
            print()
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
