"""Exporter CLI: export feature grids, convert annotations, generate weights."""

from __future__ import annotations

import argparse
import json
import sys

from .convert import convert_annotations
from .export import ExportSpec, export_features
from .network import make_weights


def cmd_export(args) -> int:
    boxes = {}
    if args.boxes:
        with open(args.boxes, "r", encoding="utf-8") as fh:
            boxes = {k: tuple(v) for k, v in json.load(fh).items()}
    spec = ExportSpec(args.images, args.out, args.weights, boxes,
                      short_axis=args.short_axis)
    written = export_features(spec)
    for path in written:
        print(path)
    return 0


def cmd_convert(args) -> int:
    for path in convert_annotations(args.src, args.catalog, args.out):
        print(path)
    return 0


def cmd_make_weights(args) -> int:
    make_weights(args.out, args.seed)
    print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="partmatch-exporter", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="export FGRD feature grids for images")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--boxes", default=None, help="JSON map: image stem -> crop box")
    p.add_argument("--weights", required=True)
    p.add_argument("--short-axis", type=int, default=224)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("convert", help="convert external annotations")
    p.add_argument("--src", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("make-weights", help="write a seeded random-init state dict")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_weights)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"partmatch-exporter {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
