"""Command line front end.

    dempc run <file|bundled-name> [--strict] [--override key=value] [--out dir] [--plot]
    dempc plot <csv> [--out dir] [--scenario file]
    dempc list

Exit codes: 0 success, 1 divergence, 2 invalid input, 3 constraint violation
in strict mode.  ``DEMPC_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_DIVERGED = 1
EXIT_INPUT = 2
EXIT_VIOLATION = 3


def _setup_logging():
    level = os.environ.get("DEMPC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def cmd_run(args) -> int:
    from . import scenario as scn
    from .sim import metrics, run
    from .traceio import format_metrics, write_csv, write_metrics

    try:
        doc = scn.apply_overrides(scn.load_document(args.file), args.override)
        sc = scn.to_scenario(doc, str(args.file))
    except scn.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out_dir = Path(args.out) if args.out else Path(".")
    csv_name = doc.get("output", {}).get("csv") or f"{sc.name}.csv"
    try:
        trace = run(sc)
    except ValueError as exc:
        # inadmissible initial reference and similar setup problems
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    csv_path = write_csv(trace, out_dir / csv_name)
    mets = metrics(trace, sc)
    write_metrics(mets, csv_path.with_suffix(".metrics.json"))
    print(f"trace: {csv_path}")
    print(format_metrics(mets))
    if args.plot or doc.get("output", {}).get("plot", False):
        from .plotting import plot_trace

        for p in plot_trace(trace, out_dir, csv_path.stem, sc):
            print(f"plot: {p}")
    if trace.diverged:
        print(f"diverged: {trace.message}", file=sys.stderr)
        return EXIT_DIVERGED
    if args.strict:
        worst = mets["max_constraint_value"]
        if worst > sc.violation_tol:
            print(f"strict: constraint value {worst:.6g} exceeds tolerance {sc.violation_tol:g}", file=sys.stderr)
            return EXIT_VIOLATION
        if trace.feasibility_violation:
            print("strict: terminal-set margin fell below tolerance", file=sys.stderr)
            return EXIT_VIOLATION
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_trace
    from .traceio import TraceFormatError, read_csv

    try:
        trace = read_csv(args.csv)
    except TraceFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    sc = None
    if args.scenario:
        from . import scenario as scn

        try:
            sc = scn.load(args.scenario)
        except scn.ScenarioError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
    csv_path = Path(args.csv)
    out_dir = Path(args.out) if args.out else csv_path.parent
    for p in plot_trace(trace, out_dir, csv_path.stem, sc):
        print(f"plot: {p}")
    return EXIT_OK


def cmd_list(args) -> int:
    from .scenario import bundled_names

    for name in bundled_names():
        print(name)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="dempc", description="Dynamically embedded MPC simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write its CSV trace")
    r.add_argument("file", help="scenario JSON file or bundled scenario name")
    r.add_argument("--strict", action="store_true", help="exit 3 on constraint violation beyond tolerance")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set a scenario entry, e.g. flow.alpha=1000 (repeatable)")
    r.add_argument("--out", help="output directory (default: current directory)")
    r.add_argument("--plot", action="store_true", help="also write SVG plots")
    r.set_defaults(func=cmd_run)

    p = sub.add_parser("plot", help="render SVG plots from a trace CSV")
    p.add_argument("csv")
    p.add_argument("--out", help="output directory (default: next to the CSV)")
    p.add_argument("--scenario", help="scenario used to draw constraint lines")
    p.set_defaults(func=cmd_plot)

    ls = sub.add_parser("list", help="list bundled scenarios")
    ls.set_defaults(func=cmd_list)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
