"""Command line: `export-glue export --arch <name> [--weights PATH] --out DIR`."""

import argparse
import sys

from .export import UnsupportedArchitectureError, desk_spec, export_model, resnet_spec


def build_parser():
    parser = argparse.ArgumentParser(
        prog="export-glue",
        description="Export classifiers into the explanation engine's "
                    "interchange format.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="export one architecture")
    p.add_argument("--arch", required=True,
                   help="'desk-cnn' or a torchvision resnet name (e.g. resnet50)")
    p.add_argument("--weights", default=None,
                   help="local state-dict file (resnet archs only)")
    p.add_argument("--seed", type=int, default=0, help="desk-cnn training seed")
    p.add_argument("--epochs", type=int, default=40, help="desk-cnn training epochs")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_export)
    return parser


def cmd_export(args):
    if args.arch == "desk-cnn":
        spec = desk_spec(seed=args.seed, epochs=args.epochs)
    else:
        spec = resnet_spec(args.arch, args.weights)
    paths = export_model(spec, args.out)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UnsupportedArchitectureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
