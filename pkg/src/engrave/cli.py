"""Command-line frontend: ``engrave <stage> [flags]``.

Exit status is 0 on success, 2 for configuration errors and 3 for data
errors (missing or malformed inputs).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import ConfigError, DataError
from .pipeline import STAGES, run_all, run_stage

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--root", help="dataset root")
    common.add_argument("--out", help="output root (defaults to the dataset root)")
    common.add_argument("--id", help="mirror id")
    common.add_argument("--seed", type=int)
    common.add_argument("--method", choices=("otsu", "sauvola", "ridge", "external"))
    common.add_argument("--threshold", type=float, help="binarization threshold for stitched maps")
    common.add_argument("--sigma", type=float, help="high-pass Gaussian sigma in pixels")
    common.add_argument("--external-dir", help="directory of externally predicted probability patches")
    common.add_argument("--input", choices=("depth_hp", "depth", "albedo"), help="grid the predictors read")
    common.add_argument("--annotation", help="annotation mask name, e.g. annotation_b")
    common.add_argument("--mode", choices=("micro", "macro"), help="metric aggregation")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="engrave", description="Engraving extraction pipeline.")
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGES + ("run",):
        p = sub.add_parser(name, parents=[common])
        if name == "evaluate":
            p.add_argument("--prediction", help="score this mask file (or mirror mask name) instead of the stitched map")
    return parser


def _overrides(args) -> dict:
    return {
        "root": args.root,
        "out": args.out,
        "id": args.id,
        "seed": args.seed,
        "input": args.input,
        "predictor.method": args.method,
        "predictor.external_dir": args.external_dir,
        "stitcher.threshold": args.threshold,
        "preprocess.gaussian_sigma_px": args.sigma,
        "metrics.annotation": args.annotation,
        "metrics.mode": args.mode,
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.stage == "run":
            written = run_all(cfg)
        elif args.stage == "evaluate":
            written = run_stage("evaluate", cfg, prediction=args.prediction)
        else:
            written = run_stage(args.stage, cfg)
    except ConfigError as exc:
        print(f"engrave {args.stage}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"engrave {args.stage}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    for p in written:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
