"""plotkit command line: fig2 (training panels) and fig1 (cosine heatmap)."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import FigureSpec, render_cosine_heatmap, render_training_figure
from .metrics_io import SchemaError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plotkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fig2", help="training loss/accuracy panels, one curve per optimizer")
    p.add_argument("--inputs", nargs="+", required=True, help="metrics CSV files")
    p.add_argument("--labels", nargs="+", help="curve labels (default: from summary.json)")
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="svg", choices=["svg", "png"])
    p.add_argument("--layout", default="paper", choices=["paper", "full"])
    p.set_defaults(func=cmd_fig2)

    p = sub.add_parser("fig1", help="class-sorted cosine-similarity heatmap")
    p.add_argument("--report", required=True, help="diagnostics.jsonl from a run")
    p.add_argument("--step", type=int, help="which recorded step (default: first)")
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="svg", choices=["svg", "png"])
    p.set_defaults(func=cmd_fig1)
    return parser


def cmd_fig2(args) -> int:
    spec = FigureSpec(
        inputs=tuple(args.inputs),
        labels=tuple(args.labels) if args.labels else None,
        out_dir=Path(args.out),
        image_format=args.format,
        layout=args.layout,
    )
    result = render_training_figure(spec)
    print(f"wrote {result.path} ({result.panel_count} panels, "
          f"curves: {', '.join(result.legend_labels)})")
    return 0


def cmd_fig1(args) -> int:
    result = render_cosine_heatmap(args.report, args.out, step=args.step,
                                   image_format=args.format)
    print(f"wrote {result.path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
