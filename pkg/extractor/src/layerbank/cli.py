"""Command line: extract banks + manifest from an image directory.

    layerbank --backbone rn50 --images-dir data/images \
              --manifest-out data/manifest.json --banks-out data/banks \
              --layers auto --batch-size 8 --test-concepts 2 --weights random
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backbones import get_spec
from .extract import extract
from .manifest import build_manifest, scan_layout, write_manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layerbank", description=__doc__)
    parser.add_argument("--backbone", required=True)
    parser.add_argument("--layers", default="auto",
                        help='"auto" or comma-separated intermediate layer indices')
    parser.add_argument("--images-dir", dest="images_dir", required=True)
    parser.add_argument("--manifest-out", dest="manifest_out", required=True)
    parser.add_argument("--banks-out", dest="banks_out", required=True)
    parser.add_argument("--batch-size", dest="batch_size", type=int, default=8)
    parser.add_argument("--test-concepts", dest="test_concepts", type=int, default=1)
    parser.add_argument("--categories",
                        help="optional JSON file mapping concept -> category")
    parser.add_argument("--weights", default="random",
                        help='"random" (seeded) or a local state-dict path')
    parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = get_spec(args.backbone)
        layout = scan_layout(args.images_dir)
        categories = None
        if args.categories:
            categories = json.loads(Path(args.categories).read_text(encoding="utf-8"))
        manifest, order = build_manifest(layout, args.test_concepts, categories)
        probes = None
        if args.layers != "auto":
            probes = [int(s) for s in args.layers.split(",")]
        written = extract(
            spec, order, args.banks_out, probes=probes,
            batch_size=args.batch_size, weights=args.weights, seed=args.seed,
        )
        Path(args.manifest_out).parent.mkdir(parents=True, exist_ok=True)
        write_manifest(manifest, args.manifest_out)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(written)} banks to {args.banks_out} and manifest to "
          f"{args.manifest_out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
