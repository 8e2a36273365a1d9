"""Command-line front end: decompose, relight, export features, evaluate.

Exit codes follow a scripting-friendly convention: 0 for success, 2
when the run finished but a solver emitted a numerical warning, 1 for
hard errors (bad flags, unreadable inputs, mismatched data).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .imgcore import ImageBuffer, load_image, save_image
from .metrics import lmse, parse_iiw_json, whdr, write_summary_csv
from .params import VARIANTS, IterationParams
from .pipeline import (
    load_bundle,
    recolor_illumination,
    relight_intensity,
    run_decomposition,
    write_bundle,
)
from .semantics import (
    build_grid,
    builtin_patch_descriptor,
    builtin_proposals,
    save_patch_features,
    save_proposals,
)

log = logging.getLogger("intrinsics")

# substrings of warnings that indicate a solver fell short of tolerance
SOLVER_WARNING_MARKS = ("stalled", "did not reach tolerance")
LOG_ENV_VAR = "INTRINSICS_LOG"


class CliError(Exception):
    """User-facing failure; message printed to stderr, exit status 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which would collide with
    # the solver-warning status; route everything through CliError -> 1
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


def _parse_overrides(pairs: list[str]) -> dict:
    """--param name=value strings -> typed IterationParams fields."""
    fields = {
        f.name: f.type if isinstance(f.type, str) else f.type.__name__
        for f in dataclasses.fields(IterationParams)
    }
    casts = {"float": float, "int": int, "str": str, "bool": lambda s: s.lower() in ("1", "true", "yes")}
    out = {}
    for pair in pairs:
        name, sep, raw = pair.partition("=")
        if not sep or not raw:
            raise CliError(f"--param expects name=value, got {pair!r}")
        if name not in fields:
            raise CliError(f"unknown parameter {name!r}")
        try:
            out[name] = casts[fields[name]](raw)
        except ValueError as exc:
            raise CliError(f"bad value for {name}: {exc}") from exc
    return out


def _build_params(args) -> IterationParams:
    overrides = _parse_overrides(args.param or [])
    if args.variant is not None:
        overrides["variant"] = args.variant
    if args.k is not None:
        overrides["iterations"] = args.k
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        return IterationParams(**overrides)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _load_image(path) -> ImageBuffer:
    try:
        return load_image(path)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from exc


def cmd_decompose(args) -> int:
    img = _load_image(args.image)
    params = _build_params(args)
    if args.backend == "builtin" and (args.features or args.proposals):
        raise CliError("--backend builtin excludes --features/--proposals")
    if args.backend == "external" and not (args.features or args.proposals):
        raise CliError("--backend external needs --features and/or --proposals")
    try:
        result = run_decomposition(
            img, params, features_path=args.features, proposals_path=args.proposals
        )
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    out = write_bundle(result, img, args.out)
    log.info("bundle written to %s", out)
    print(str(out))
    if any(mark in w for w in result.warnings for mark in SOLVER_WARNING_MARKS):
        print("solver warnings recorded in metadata.json", file=sys.stderr)
        return 2
    return 0


def _bundle_arrays(bundle) -> dict:
    try:
        return load_bundle(bundle)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from exc


def cmd_relight_color(args) -> int:
    try:
        a, b = (float(part) for part in args.ab.split(","))
    except ValueError as exc:
        raise CliError(f"--ab expects two comma-separated numbers, got {args.ab!r}") from exc
    arrays = _bundle_arrays(args.bundle)
    try:
        out = recolor_illumination(
            arrays["merged_reflectance"],
            arrays["merged_shading"],
            (a, b),
            percentile=args.percentile,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    path = Path(args.bundle) / "relit_color.png"
    save_image(path, out)
    print(str(path))
    return 0


def cmd_relight_intensity(args) -> int:
    arrays = _bundle_arrays(args.bundle)
    out = relight_intensity(
        arrays["reflectance"],
        arrays["shading"],
        np.exp(arrays["log_reflectance"]),
        np.exp(arrays["log_shading"]),
        ImageBuffer(arrays["input"]),
        scale=args.scale,
    )
    path = Path(args.bundle) / "relit_intensity.png"
    save_image(path, out)
    print(str(path))
    return 0


def _eval_one(metric, pred_path, ref_path, args):
    pred = _load_image(pred_path)
    if metric == "whdr":
        try:
            judgements = parse_iiw_json(ref_path)
        except (OSError, ValueError) as exc:
            raise CliError(str(exc)) from exc
        return whdr(pred, judgements, delta=args.delta)
    gt = _load_image(ref_path)
    try:
        return lmse(pred, gt, window=args.window, step=args.step)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _eval_pairs(args):
    """Single files, or directories matched by stem for batch mode."""
    ref = args.judgements if args.metric == "whdr" else args.gt
    if ref is None:
        flag = "--judgements" if args.metric == "whdr" else "--gt"
        raise CliError(f"{args.metric} requires {flag}")
    pred, ref = Path(args.pred), Path(ref)
    if not pred.is_dir():
        return [(pred.name, pred, ref)]
    if not ref.is_dir():
        raise CliError("batch mode needs the reference to be a directory too")
    suffix = ".json" if args.metric == "whdr" else ".png"
    pairs = []
    for image in sorted(pred.glob("*.png")):
        match = ref / (image.stem + suffix)
        if match.exists():
            pairs.append((image.name, image, match))
    if not pairs:
        raise CliError(f"no matching {suffix} references under {ref}")
    return pairs


def cmd_eval(args) -> int:
    pairs = _eval_pairs(args)

    def worker(item):
        return item[0], _eval_one(args.metric, item[1], item[2], args)

    if args.jobs > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(worker, pairs))
    else:
        rows = [worker(item) for item in pairs]
    for name, report in rows:
        print(json.dumps({"image": name, "metric": report.metric, "value": report.value, "params": report.params}))
    scored = [rep.value for _, rep in rows if rep.valid]
    if len(pairs) > 1:
        summary = {
            "image": "mean",
            "metric": args.metric,
            "value": float(np.mean(scored)) if scored else 0.0,
            "params": {"images": len(scored)},
        }
        print(json.dumps(summary))
    if args.csv:
        write_summary_csv(args.csv, rows)
    if not scored:
        raise CliError("no comparisons scored; reports flagged invalid")
    return 0


def cmd_features(args) -> int:
    img = _load_image(args.image)
    params = _build_params(args)
    if params.patch_size > min(img.width, img.height):
        raise CliError(
            f"patch size {params.patch_size} exceeds image "
            f"{img.width}x{img.height}; no grid to export"
        )
    grid = build_grid(img.width, img.height, params.patch_size, params.patch_stride)
    feats = builtin_patch_descriptor(img, grid)
    save_patch_features(args.out_spft, feats, grid)
    props = builtin_proposals(img, p_max=params.proposal_cap)
    save_proposals(args.out_sppr, props)
    print(f"{args.out_spft} ({grid.patch_count} patches)")
    print(f"{args.out_sppr} ({props.count} proposals)")
    return 0


def _add_param_flags(sub):
    sub.add_argument("--variant", choices=sorted(VARIANTS), default=None)
    sub.add_argument("--k", type=int, default=None, help="alternating iterations")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--param", action="append", metavar="NAME=VALUE",
                     help="override any solver parameter; echoed in metadata")


def build_parser() -> _Parser:
    parser = _Parser(prog="intrinsics", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    dec = subs.add_parser("decompose", help="split an image into reflectance and shading")
    dec.add_argument("image")
    dec.add_argument("--out", required=True, help="bundle output directory")
    dec.add_argument("--features", default=None, help="patch-feature file (SPFT)")
    dec.add_argument("--proposals", default=None, help="region-proposal file (SPPR)")
    dec.add_argument("--backend", choices=("auto", "builtin", "external"), default="auto")
    _add_param_flags(dec)
    dec.set_defaults(func=cmd_decompose)

    rc = subs.add_parser("relight-color", help="tint the illumination of a decomposed bundle")
    rc.add_argument("--bundle", required=True)
    rc.add_argument("--ab", required=True, help="target chroma shift, e.g. 12,-4")
    rc.add_argument("--percentile", type=float, default=95.0)
    rc.set_defaults(func=cmd_relight_color)

    ri = subs.add_parser("relight-intensity", help="brighten a bundle using stage disagreement")
    ri.add_argument("--bundle", required=True)
    ri.add_argument("--scale", type=float, default=0.5)
    ri.set_defaults(func=cmd_relight_intensity)

    ev = subs.add_parser("eval", help="score a reflectance estimate")
    ev.add_argument("metric", choices=("whdr", "lmse"))
    ev.add_argument("--pred", required=True, help="estimate PNG, or a directory for batch mode")
    ev.add_argument("--judgements", default=None, help="IIW-style JSON (whdr)")
    ev.add_argument("--gt", default=None, help="ground-truth PNG (lmse)")
    ev.add_argument("--delta", type=float, default=0.10)
    ev.add_argument("--window", type=int, default=20)
    ev.add_argument("--step", type=int, default=10)
    ev.add_argument("--csv", default=None, help="also write a CSV summary")
    ev.add_argument("--jobs", type=int, default=1, help="parallel workers in batch mode")
    ev.set_defaults(func=cmd_eval)

    feat = subs.add_parser("features", help="export builtin patch features and proposals")
    feat.add_argument("image")
    feat.add_argument("--out-spft", required=True)
    feat.add_argument("--out-sppr", required=True)
    _add_param_flags(feat)
    feat.set_defaults(func=cmd_features)
    return parser


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV_VAR)
    if level:
        logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO))
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
