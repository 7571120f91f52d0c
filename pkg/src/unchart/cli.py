"""Command-line front end.

Subcommands mirror the pipeline stages: ``simulate`` writes measurement
series for both machines, ``fit`` builds one machine's artifacts,
``locate`` maps the shared test points through them, ``compare`` scores
two maps, and ``experiment`` chains everything.  Exit status is 0 on
success, 2 for usage or configuration errors, 1 for stage failures.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import load_config
from .errors import ConfigError, UnchartError
from .harness import experiment, stage_compare, stage_fit, stage_locate, stage_simulate

USAGE_EXIT = 2
FAILURE_EXIT = 1


def _add_common(parser):
    parser.add_argument("--config", default="default",
                        help="config file path, or 'default' for the packaged one")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--format", default="csv", choices=["csv"],
                        help="output format (csv only)")


def _resolve_config(args):
    cfg = load_config(args.config)
    seed = args.seed
    if seed is None and os.environ.get("UNCHART_SEED"):
        try:
            seed = int(os.environ["UNCHART_SEED"])
        except ValueError as exc:
            raise ConfigError(f"UNCHART_SEED must be an integer: {exc}") from exc
    if seed is not None:
        cfg = cfg.with_seed(seed)
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unchart",
        description="coordinate-free stimulus maps from raw sensor time series")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample the world and write measurement series")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit", help="fit one machine's artifacts from a series file")
    _add_common(p)
    p.add_argument("--machine", required=True, help="machine name from the config")
    p.add_argument("--trajectory", required=True, help="measurement-series CSV")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("locate", help="map the shared test points through artifacts")
    _add_common(p)
    p.add_argument("--machine", required=True)
    p.add_argument("--artifacts", required=True, help="artifacts .npz from fit")
    p.add_argument("--suite", required=True, help="suite .json from simulate")
    p.add_argument("--points", required=True, help="points .csv from simulate")
    p.add_argument("--out", required=True, help="output map CSV path")

    p = sub.add_parser("compare", help="score the agreement of two maps")
    p.add_argument("map_a")
    p.add_argument("map_b")
    p.add_argument("--out", default=None, help="report CSV path (optional)")

    p = sub.add_parser("experiment", help="run the full two-machine experiment")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except UnchartError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILURE_EXIT
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILURE_EXIT


def _dispatch(args) -> int:
    if args.command == "simulate":
        cfg = _resolve_config(args)
        manifest = stage_simulate(cfg, args.out)
        for key in sorted(manifest):
            print(f"{key}: {manifest[key]}")
        return 0

    if args.command == "fit":
        cfg = _resolve_config(args)
        path = stage_fit(cfg, args.machine, args.trajectory, args.out)
        print(f"artifacts: {path}")
        return 0

    if args.command == "locate":
        cfg = _resolve_config(args)
        path = stage_locate(cfg, args.machine, args.artifacts, args.suite,
                            args.points, args.out)
        print(f"map: {path}")
        return 0

    if args.command == "compare":
        out = args.out if args.out else os.devnull
        report = stage_compare(args.map_a, args.map_b, out)
        print(f"compared points: {int(np.sum(report.both_ok))}")
        print(f"rms ds1: {report.rms[0]:.6g}")
        print(f"rms ds2: {report.rms[1]:.6g}")
        print(f"max |ds1|: {report.max_abs[0]:.6g}")
        print(f"max |ds2|: {report.max_abs[1]:.6g}")
        print(f"failures: {report.failures_a} (a), {report.failures_b} (b)")
        return 0

    if args.command == "experiment":
        cfg = _resolve_config(args)
        report = experiment(cfg, args.out)
        print(f"report: {os.path.join(args.out, 'report.csv')}")
        print(f"compared points: {int(np.sum(report.both_ok))}")
        print(f"rms (s1, s2): ({report.rms[0]:.6g}, {report.rms[1]:.6g})")
        print(f"max  (s1, s2): ({report.max_abs[0]:.6g}, {report.max_abs[1]:.6g})")
        return 0

    raise ConfigError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
