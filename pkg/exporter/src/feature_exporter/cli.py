"""Command-line entry point: image folder in, FBNK1 bank + index.json out."""

import argparse
import json
import sys

from .export import ExportError, ExportSpec, export_bank


def build_parser():
    p = argparse.ArgumentParser(
        prog="feature-export",
        description="Extract six tap points of a frozen residual backbone "
                    "over a class-per-folder image directory and write an "
                    "FBNK1 feature bank.")
    p.add_argument("--image-root", required=True,
                   help="directory with one subdirectory per class")
    p.add_argument("--out", required=True, help="output FBNK1 file path")
    p.add_argument("--tap-names",
                   help="comma-separated names for the six tap slots")
    p.add_argument("--pool", default="global-average",
                   help="spatial reduction (only global-average)")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--image-size", type=int, default=64,
                   help="images are resized to this square edge")
    p.add_argument("--head-classes", type=int,
                   help="build the classifier head with this many classes "
                        "(its softmax is stored when it matches the folder "
                        "class count)")
    p.add_argument("--weights-cache", help="directory for cached backbone weights")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for fallback backbone initialization")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    kwargs = dict(image_root=args.image_root, output_path=args.out,
                  pool=args.pool, batch_size=args.batch_size,
                  image_size=args.image_size, head_classes=args.head_classes,
                  weights_cache=args.weights_cache, seed=args.seed)
    if args.tap_names is not None:
        kwargs["tap_names"] = [tok for tok in args.tap_names.split(",") if tok]
    try:
        report = export_bank(ExportSpec(**kwargs))
    except (ExportError, OSError) as exc:
        print(f"feature-export: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(report, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
