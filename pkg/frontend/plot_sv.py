#!/usr/bin/env python3
"""Render the singular-value decay of a snapshot-basis (PEXP) file.

Usage:
    plot_sv.py <basis.pexp> <out.png>

PEXP layout (little endian): magic "PEXP", u32 version, u64 rows, u64
retained, rows*retained f64 column-major basis entries, u64 count, count
f64 singular values.  Only the header and the singular values are read.
The plot is headless (Agg), log-scaled on the y axis, with the retained
count marked.
"""

from __future__ import annotations

import argparse
import struct
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

POD_MAGIC = b"PEXP"


class BasisFileError(ValueError):
    """Raised when the basis file is malformed."""


def read_singular_values(path):
    """Return (singular values, retained count) from a PEXP file."""
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != POD_MAGIC:
                raise BasisFileError(f"bad magic {magic!r}, expected {POD_MAGIC!r}")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != 1:
                raise BasisFileError(f"unsupported version {version}")
            rows, retained = struct.unpack("<QQ", fh.read(16))
            fh.seek(8 * rows * retained, 1)
            raw = fh.read(8)
            if len(raw) != 8:
                raise BasisFileError("truncated file: singular value count missing")
            (count,) = struct.unpack("<Q", raw)
            payload = fh.read(8 * count)
    except OSError as exc:
        raise BasisFileError(f"cannot read {path}: {exc}") from exc
    if len(payload) != 8 * count:
        raise BasisFileError(
            f"truncated file: {len(payload) // 8} of {count} singular values"
        )
    values = np.frombuffer(payload, dtype="<f8")
    if count == 0:
        raise BasisFileError("file holds no singular values")
    return values, int(retained)


def plot_singular_values(basis_path, out_path):
    """Log-scale decay plot; returns the figure."""
    values, retained = read_singular_values(basis_path)
    positive = values > 0.0
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    index = np.arange(1, values.size + 1)
    ax.semilogy(index[positive], values[positive], "o-", markersize=3)
    if retained >= 1:
        ax.axvline(retained, color="tab:red", linestyle="--", alpha=0.7,
                   label=f"retained = {retained}")
        ax.legend()
    ax.set_xlabel("index")
    ax.set_ylabel("singular value")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("basis", help="snapshot-basis file (PEXP)")
    parser.add_argument("out", help="output image path (PNG)")
    args = parser.parse_args(argv)
    try:
        fig = plot_singular_values(args.basis, args.out)
    except BasisFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    plt.close(fig)
    return 0


if __name__ == "__main__":
    sys.exit(main())
