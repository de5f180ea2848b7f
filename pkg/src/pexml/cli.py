"""Command line entry point.

Subcommands map one-to-one onto pipeline stages::

    pexml spaces   --config cfg [--out DIR]    build field + coarse bases
    pexml gamma    --config cfg [--out DIR]    stability report (printed too)
    pexml simulate --config cfg [--out DIR] [--w 1,2,3,4]
    pexml dataset  --config cfg [--out DIR]    training runs
    pexml pod      --config cfg [--out DIR]    snapshot basis
    pexml train    --config cfg [--out DIR]    network fit
    pexml eval     --config cfg [--out DIR]    errors.csv + summary.txt
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import pipeline
from .config import ConfigError, load_config_file

STAGES = ("spaces", "gamma", "simulate", "dataset", "pod", "train", "eval")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pexml",
        description="split-scheme multiscale solver with a learned implicit component",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", required=True, help="key=value configuration file")
        p.add_argument("--out", default="pexml_out", help="artifact directory")
        if stage == "simulate":
            p.add_argument(
                "--w", default=None,
                help="comma-separated source parameters (default: interval midpoint)",
            )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config_file(args.config)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    ctx = pipeline.PipelineContext(config, args.out)
    try:
        if args.stage == "spaces":
            spaces = pipeline.stage_spaces(ctx)
            print(f"dim_implicit={spaces.dim_implicit}")
            print(f"dim_explicit={spaces.dim_explicit}")
        elif args.stage == "gamma":
            report = pipeline.stage_gamma(ctx)
            print(report.as_text(), end="")
        elif args.stage == "simulate":
            w = None
            if args.w is not None:
                w = np.array([float(v) for v in args.w.split(",")])
            pipeline.stage_simulate(ctx, w)
            print(f"wrote {ctx.path('traj_split.pext')} and {ctx.path('traj_fine.pext')}")
        elif args.stage == "dataset":
            runs = pipeline.stage_dataset(ctx)
            print(f"trajectories={len(runs)}")
        elif args.stage == "pod":
            basis, _ = pipeline.stage_pod(ctx)
            print(f"retained={basis.retained}")
        elif args.stage == "train":
            _, history = pipeline.stage_train(ctx)
            print(f"final_loss={history[-1][1]:.6g}")
        elif args.stage == "eval":
            _, summary = pipeline.stage_eval(ctx)
            for key, value in summary.items():
                print(f"{key}={value:.6g}" if isinstance(value, float) else f"{key}={value}")
    except pipeline.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
