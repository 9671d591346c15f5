"""Command-line entry point: ``plotkit <kind> --in report.json --out fig.png``.

Kinds: density, resilience, profiles. Output format follows the file
extension (PNG and SVG supported). Exit codes: 0 success, 2 bad input.
"""

from __future__ import annotations

import argparse
import sys

from .render import (MissingSectionError, SchemaError, load_report,
                     plot_density, plot_profiles, plot_resilience)

RENDERERS = {
    "density": plot_density,
    "resilience": plot_resilience,
    "profiles": plot_profiles,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plotkit")
    parser.add_argument("kind", choices=sorted(RENDERERS))
    parser.add_argument("--in", dest="input", required=True,
                        help="report JSON produced by servingbench")
    parser.add_argument("--out", required=True,
                        help="output image (.png or .svg)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = load_report(args.input)
        RENDERERS[args.kind](report, args.out)
    except (SchemaError, MissingSectionError, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
