"""``make_figures <run-dir> --out <fig-dir>`` entry point."""

from __future__ import annotations

import argparse
import sys

from .figures import make_figures
from .io import SchemaMismatch


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="make_figures")
    parser.add_argument("run_dir", help="simulator run directory")
    parser.add_argument("--out", required=True, help="figure output directory")
    parser.add_argument("--bins", type=int, default=20)
    args = parser.parse_args(argv)
    try:
        written = make_figures(args.run_dir, args.out, bins=args.bins)
    except SchemaMismatch as exc:
        print(f"make_figures: {exc}", file=sys.stderr)
        return 2
    for kind, path in sorted(written.items()):
        print(f"{kind}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
