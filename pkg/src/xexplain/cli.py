"""Command-line front end.

Subcommands: build-index, explain, ablate, mask-dataset, render.
Exit codes: 0 success, 2 usage, 3 model-contract violation, 4 data error,
5 no region satisfied the matching constraint.
"""

import argparse
import contextlib
import os
import sys

from .ablation import ALL_METHODS, AblationConfig, generate_masked_dataset, run_ablation
from .backend import load_model
from .errors import DataError, ModelContractError, NoMatchError
from .explainers import explain_latent, explain_superpixel, load_record, save_record
from .index import build_index, load_index, save_index
from .render import render_explanation

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tiff")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MODEL_CONTRACT = 3
EXIT_DATA = 4
EXIT_NO_MATCH = 5


def _float_or_inf(text):
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'inf', got {text!r}")


def _int_list(text):
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _collect_images(specs):
    paths = []
    for spec in specs:
        if os.path.isdir(spec):
            names = sorted(os.listdir(spec))
            paths.extend(os.path.join(spec, n) for n in names
                         if n.lower().endswith(IMAGE_EXTENSIONS))
        else:
            paths.append(spec)
    if not paths:
        raise DataError("no input images found")
    return paths


def _add_model_args(parser):
    parser.add_argument("--model", required=True, help="model graph file")
    parser.add_argument("--manifest", required=True, help="model manifest JSON")


@contextlib.contextmanager
def _thread_limit(threads):
    if threads is None:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=threads):
        yield


def build_parser():
    parser = argparse.ArgumentParser(
        prog="xexplain",
        description="Case-based explanations: link salient parts of a test "
                    "image to matching regions of nearest training images.")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap numeric-library worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-index", help="embed a corpus into a latent index")
    _add_model_args(p)
    p.add_argument("images", nargs="+", help="image files or directories")
    p.add_argument("--out", required=True, help="output index path")
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("explain", help="explain one image against the index")
    _add_model_args(p)
    p.add_argument("--index", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--method", choices=("latent", "superpixel"), default="latent")
    p.add_argument("--alpha", type=_float_or_inf, default=5.0)
    p.add_argument("--beta", type=_float_or_inf, default=float("inf"))
    p.add_argument("--pool", type=int, default=50)
    p.add_argument("--k-features", type=int, default=3)
    p.add_argument("--segments", type=int, default=30)
    p.add_argument("--saliency",
                   choices=("cam", "fam", "random", "lime", "logit"),
                   default=None,
                   help="cell scoring (latent: cam/fam/random) or test-part "
                        "ranking (superpixel: lime/logit)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--no-render", action="store_true",
                   help="write the JSON record only")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("ablate", help="inclusion/occlusion logit curves")
    _add_model_args(p)
    p.add_argument("images", nargs="+")
    p.add_argument("--methods", default="cam,random",
                   help=f"comma list from {','.join(ALL_METHODS)}")
    p.add_argument("--segments", type=_int_list, default=[30],
                   help="comma list of segment counts to sweep")
    p.add_argument("--mode", choices=("include", "occlude", "both"),
                   default="both")
    p.add_argument("--n-images", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("mask-dataset",
                       help="occlude constraint-passing regions corpus-wide")
    _add_model_args(p)
    p.add_argument("images", nargs="+")
    p.add_argument("--method", choices=ALL_METHODS, default="cam")
    p.add_argument("--threshold", type=_float_or_inf, default=float("inf"),
                   help="selectivity (alpha/beta role): regions above "
                        "max/threshold are occluded")
    p.add_argument("--segments", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full-occlusion", action="store_true",
                   help="occlude every pixel (sanity baseline)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_mask_dataset)

    p = sub.add_parser("render", help="draw overlays for a saved record")
    p.add_argument("--record", required=True, help="explanation JSON path")
    p.add_argument("--manifest", required=True, help="model manifest JSON")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_render)

    return parser


def cmd_build_index(args):
    bundle = load_model(args.model, args.manifest)
    paths = _collect_images(args.images)
    index = build_index(bundle, paths)
    save_index(index, args.out)
    print(f"indexed {index.count} images at dimension {index.dim} -> {args.out}")
    return EXIT_OK


def cmd_explain(args):
    bundle = load_model(args.model, args.manifest)
    index = load_index(args.index)
    if args.method == "latent":
        saliency = args.saliency or "cam"
        if saliency not in ("cam", "fam", "random"):
            raise DataError(
                f"saliency {saliency!r} is not a cell method; latent "
                "explanations take cam, fam or random")
        record = explain_latent(
            bundle, index, args.image, alpha=args.alpha, pool_size=args.pool,
            k_features=args.k_features, saliency=saliency, seed=args.seed)
    else:
        saliency = args.saliency or "lime"
        if saliency not in ("lime", "logit"):
            raise DataError(
                f"saliency {saliency!r} is not a segment ranking; superpixel "
                "explanations take lime or logit")
        record = explain_superpixel(
            bundle, index, args.image, beta=args.beta, pool_size=args.pool,
            k_features=args.k_features, segments=args.segments,
            test_saliency=saliency, seed=args.seed)

    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    record_path = os.path.join(args.out, f"{stem}.explanation.json")
    save_record(record, record_path)
    print(f"{record_path}: class {record.predicted_class_name!r}, "
          f"{len(record.features)} feature(s), "
          f"{record.timings.get('total', 0.0):.2f}s")
    if not args.no_render:
        rendered = render_explanation(record, args.out, bundle.input_shape[1:])
        print(f"overlay: {rendered['overlay']}")
        print(f"composite: {rendered['composite']}")
    return EXIT_OK


def cmd_ablate(args):
    bundle = load_model(args.model, args.manifest)
    paths = _collect_images(args.images)
    modes = ("include", "occlude") if args.mode == "both" else (args.mode,)
    config = AblationConfig(
        methods=tuple(m for m in args.methods.split(",") if m),
        segment_counts=tuple(args.segments),
        modes=modes,
        n_images=args.n_images,
        seed=args.seed)
    result = run_ablation(bundle, paths, config)
    result.write_csv(args.out)
    for row in result.aggregate():
        print(f"{row['method']} segments={row['segment_count']} "
              f"{row['mode']}: mean logit {row['mean_logit']:.4f} "
              f"+/- {row['stderr']:.4f} (n={row['n']})")
    if result.failures:
        print(f"warning: {result.failures} image(s) skipped", file=sys.stderr)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_mask_dataset(args):
    bundle = load_model(args.model, args.manifest)
    paths = _collect_images(args.images)
    entries = generate_masked_dataset(
        bundle, paths, args.method, args.threshold, args.out,
        segments=args.segments, seed=args.seed,
        full_occlusion=args.full_occlusion)
    mean_fraction = sum(e["occluded_fraction"] for e in entries) / len(entries)
    print(f"masked {len(entries)} images -> {args.out} "
          f"(mean occluded fraction {mean_fraction:.3f})")
    return EXIT_OK


def cmd_render(args):
    import json

    record = load_record(args.record)
    try:
        with open(args.manifest) as fh:
            manifest = json.load(fh)
        input_shape = manifest["input_shape"]
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read manifest {args.manifest}: {exc}") from exc
    rendered = render_explanation(record, args.out, tuple(input_shape[1:]))
    print(f"overlay: {rendered['overlay']}")
    print(f"composite: {rendered['composite']}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except ModelContractError as exc:
        print(f"error (model contract): {exc}", file=sys.stderr)
        return EXIT_MODEL_CONTRACT
    except NoMatchError as exc:
        print(f"error (no match): {exc}", file=sys.stderr)
        return EXIT_NO_MATCH
    except DataError as exc:
        print(f"error (data): {exc}", file=sys.stderr)
        return EXIT_DATA


def run():
    raise SystemExit(main())


if __name__ == "__main__":
    run()
