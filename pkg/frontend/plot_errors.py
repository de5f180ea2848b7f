#!/usr/bin/env python3
"""Render error curves from a `step,t,e1,e2,e3,e4` CSV.

Usage:
    plot_errors.py <errors.csv> <out.png> [--series e1,e2]

The input file is never modified; the script exits nonzero when the CSV
does not parse.  Rendering is headless (Agg) and deterministic.
"""

from __future__ import annotations

import argparse
import csv
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

EXPECTED_HEADER = ["step", "t", "e1", "e2", "e3", "e4"]
SERIES_STYLES = {"e1": "-", "e2": "--", "e3": "-.", "e4": ":"}


class ErrorsCsvError(ValueError):
    """Raised when the errors table is malformed."""


def read_errors(path):
    """Parse the errors CSV into a dict of column arrays."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != EXPECTED_HEADER:
                raise ErrorsCsvError(
                    f"unexpected header {header!r}, expected {EXPECTED_HEADER!r}"
                )
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(EXPECTED_HEADER):
                    raise ErrorsCsvError(f"line {lineno}: expected 6 fields")
                try:
                    rows.append([float(v) for v in row])
                except ValueError as exc:
                    raise ErrorsCsvError(f"line {lineno}: {exc}") from exc
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise ErrorsCsvError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ErrorsCsvError("no data rows")
    data = np.asarray(rows)
    return {name: data[:, i] for i, name in enumerate(EXPECTED_HEADER)}


def plot_errors(csv_path, out_path, series=("e1", "e2")):
    """Plot the selected error series against time; returns the figure."""
    unknown = [s for s in series if s not in SERIES_STYLES]
    if unknown:
        raise ErrorsCsvError(f"unknown series {unknown}, options: e1,e2,e3,e4")
    table = read_errors(csv_path)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name in series:
        ax.plot(table["t"], table[name], SERIES_STYLES[name], label=name)
    ax.set_xlabel("t")
    ax.set_ylabel("relative error (%)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("csv", help="errors CSV (step,t,e1,e2,e3,e4)")
    parser.add_argument("out", help="output image path (PNG)")
    parser.add_argument(
        "--series", default="e1,e2",
        help="comma-separated subset of e1,e2,e3,e4 (default e1,e2)",
    )
    args = parser.parse_args(argv)
    series = tuple(s.strip() for s in args.series.split(",") if s.strip())
    try:
        fig = plot_errors(args.csv, args.out, series)
    except ErrorsCsvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    plt.close(fig)
    return 0


if __name__ == "__main__":
    sys.exit(main())
