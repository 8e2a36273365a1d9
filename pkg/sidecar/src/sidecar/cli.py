"""Command-line exporter for network patch features and region proposals.

    sidecar export --image photo.png --spft photo.spft --sppr photo.sppr

Writes both interchange files for one image. Exit status is 0 on
success and 1 on any error (unreadable image, unavailable backend,
refusal to write non-conforming features).
"""

from __future__ import annotations

import argparse
import sys

from .features import GridSpec, SidecarConfig, export_patch_features
from .proposals import export_proposals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sidecar",
        description="Export SPFT patch features and SPPR region proposals.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    exp = sub.add_parser(
        "export", help="export both interchange files for one image"
    )
    exp.add_argument("--image", required=True, help="input image (PNG/JPEG/PPM)")
    exp.add_argument("--spft", required=True, help="output path for patch features")
    exp.add_argument("--sppr", required=True, help="output path for region proposals")
    exp.add_argument("--patch-size", type=int, default=60)
    exp.add_argument("--stride", type=int, default=30)
    exp.add_argument("--model", default="alexnet")
    exp.add_argument("--method", default="felzenszwalb-multiscale")
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--batch-size", type=int, default=32)
    return parser


def cmd_export(args: argparse.Namespace) -> int:
    config = SidecarConfig(
        model=args.model,
        proposal_method=args.method,
        spft_path=args.spft,
        sppr_path=args.sppr,
        seed=args.seed,
        batch_size=args.batch_size,
    )
    grid = GridSpec(patch_size=args.patch_size, stride=args.stride)
    feats = export_patch_features(args.image, grid, config)
    weights = "pretrained" if feats.pretrained else "seeded random init"
    print(
        f"wrote {feats.path}: {feats.patch_count} patches x "
        f"{feats.feature_dim} features ({weights})"
    )
    props = export_proposals(args.image, config)
    print(f"wrote {props.path}: {props.count} proposals")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return cmd_export(args)
    except (OSError, ValueError) as exc:
        print(f"sidecar: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
