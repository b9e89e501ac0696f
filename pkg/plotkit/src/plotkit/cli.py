"""Command line: one subcommand per figure kind.

Each command reads the documented CSV schema and writes the image next to
the input file unless -o overrides the destination.  Exit codes: 0 on
success, 2 on a schema or input problem."""

import argparse
import os
import sys

from .figures import FigureSpec, render
from .schemas import KINDS, SchemaError


def default_output(kind, csv_path, fmt):
    base = os.path.dirname(os.path.abspath(csv_path))
    return os.path.join(base, f"{kind.replace('-', '_')}.{fmt}")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="dimermc-plot",
        description="render benchmark figures from dimermc CSV output")
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"render a {kind} figure")
        p.add_argument("csv", help="input CSV file")
        p.add_argument("-o", "--output",
                       help="image path (default: next to the CSV; "
                            "extension picks the format, e.g. .png or .pdf)")
        p.add_argument("--format", default="png",
                       help="image format when -o is not given")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.output or default_output(args.kind, args.csv, args.format)
    spec = FigureSpec(kind=args.kind, inputs=[args.csv], output=out)
    try:
        render(spec)
    except (SchemaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
