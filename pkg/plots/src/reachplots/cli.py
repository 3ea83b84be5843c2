"""Standalone plotting entry point.

    reachplot heatmap --values out/heatmap.csv --out fig.png \
        --goal 5,5,7,7 --unsafe=-8,-2,1,0 --unsafe=3,-8,5,0

    reachplot trajectories --traj out/trajectories/*.csv --out traj.png \
        --goal 5,5,7,7

Boxes are given as ``x_lo,y_lo,x_hi,y_hi`` and drawn as outlines; use the
``--flag=value`` form when the first coordinate is negative.  Exit code
is 0 exactly when every requested image was written.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import CsvFormatError, FigureJob, plot_heatmap, plot_trajectories


def _parse_box(text: str):
    parts = [float(tok) for tok in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(
            f"box must be x_lo,y_lo,x_hi,y_hi, got {text!r}")
    return ((parts[0], parts[1]), (parts[2], parts[3]))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reachplot",
        description="Render heatmap and trajectory figures from reachsyn CSVs.")
    sub = parser.add_subparsers(dest="command", required=True)

    heat = sub.add_parser("heatmap", help="value heatmap over the 2-D partition")
    heat.add_argument("--values", required=True, help="heatmap CSV from the pipeline")
    heat.add_argument("--out", required=True, help="output image path")

    traj = sub.add_parser("trajectories", help="2-D trajectory overlays")
    traj.add_argument("--traj", required=True, nargs="+",
                      help="one or more trajectory CSVs")
    traj.add_argument("--out", required=True, help="output image path")

    for p in (heat, traj):
        p.add_argument("--goal", action="append", type=_parse_box, default=[],
                       help="goal box x_lo,y_lo,x_hi,y_hi (repeatable)")
        p.add_argument("--unsafe", action="append", type=_parse_box, default=[],
                       help="unsafe box x_lo,y_lo,x_hi,y_hi (repeatable)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "heatmap":
            job = FigureJob(inputs=[Path(args.values)], output=Path(args.out),
                            goal=args.goal, unsafe=args.unsafe)
            plot_heatmap(job)
        else:
            job = FigureJob(inputs=[Path(p) for p in args.traj],
                            output=Path(args.out), goal=args.goal,
                            unsafe=args.unsafe)
            plot_trajectories(job)
    except (CsvFormatError, FileNotFoundError) as exc:
        print(f"reachplot: {exc}", file=sys.stderr)
        return 1
    if not Path(args.out).exists():
        print(f"reachplot: failed to write {args.out}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
