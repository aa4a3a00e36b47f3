#!/usr/bin/env python3
"""Score Otsu, Sauvola and the second annotation on real mirror data.

Expects one directory per mirror under ``--root`` holding
``derived/depth_hp.etgr`` plus ``masks/annotation_a.png``,
``masks/annotation_b.png`` and ``masks/object.png``. Counts are pooled over
mirrors (micro average) and printed as percentages next to the reference
values.

    python3 scripts/reproduce_released.py --root /data/mirrors [--config cfg.json]
"""

import argparse
import json
import sys
from pathlib import Path

from engrave.config import load_config
from engrave.errors import ConfigError, EngraveError
from engrave.metrics import MetricsReport, aggregate
from engrave.pipeline import run_stage

# reference (IoU, pFM) against annotation A
REFERENCE = {"otsu": (12.84, 22.79), "sauvola": (19.08, 32.72), "annotation_b": (37.03, 56.78)}


def find_mirrors(root: Path) -> list[str]:
    return sorted(p.name for p in root.iterdir()
                  if (p / "derived" / "depth_hp.etgr").is_file() and (p / "masks" / "annotation_b.png").is_file())


def pooled(paths) -> MetricsReport:
    reps = []
    for p in paths:
        c = json.loads(Path(p).read_text())["counts"]
        reps.append(MetricsReport.from_counts(c["tp"], c["fp"], c["fn"], c["tn"], c["skel_tp"], c["skel_n"]))
    return aggregate(reps, "micro")


def score_method(root, out, mirrors, name, config=None) -> MetricsReport:
    paths = []
    for mid in mirrors:
        over = {"root": str(root), "out": str(out), "id": mid}
        if name == "annotation_b":
            cfg = load_config(config, over)
            run_stage("evaluate", cfg, prediction="annotation_b")
        else:
            cfg = load_config(config, {**over, "predictor.method": name})
            run_stage("evaluate", cfg)
        paths.append(cfg.out_dir / "evaluate" / name / "metrics.json")
    return pooled(paths)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", type=Path, required=True)
    ap.add_argument("--out", type=Path, default=Path("reproduction_runs"))
    ap.add_argument("--config", type=Path, default=None)
    ap.add_argument("--mirrors", nargs="*", default=None)
    args = ap.parse_args(argv)
    try:
        mirrors = args.mirrors or find_mirrors(args.root)
        if not mirrors:
            print(f"no usable mirrors under {args.root}", file=sys.stderr)
            return 3
        print(f"{len(mirrors)} mirrors")
        for name, (iou_ref, pfm_ref) in REFERENCE.items():
            rep = score_method(args.root, args.out, mirrors, name, args.config)
            print(f"{name:>13}  IoU {100 * rep.iou:6.2f} (ref {iou_ref:5.2f})  pFM {100 * rep.pfm:6.2f} (ref {pfm_ref:5.2f})")
    except EngraveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
