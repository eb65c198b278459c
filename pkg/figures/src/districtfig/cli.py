"""Command line entry point: ``districtfig plot --runs runs.csv --metric Unfairness --out fig.png``."""

from __future__ import annotations

import argparse
import sys

from .plotting import plot_distributions


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="districtfig",
                                     description="Figures from districting runs tables")
    sub = parser.add_subparsers(dest="command", required=True)
    plot = sub.add_parser("plot", help="normalized per-state distributions")
    plot.add_argument("--runs", required=True, help="runs.csv path")
    plot.add_argument("--metric", required=True, help="metric column, e.g. Unfairness")
    plot.add_argument("--out", required=True, help="output image path")
    plot.add_argument("--bins", type=int, default=40)
    plot.add_argument("--force", action="store_true", help="overwrite an existing output file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = plot_distributions(args.runs, args.metric, args.out, bins=args.bins,
                                 force=args.force)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
