"""File-driven pipeline stages.

Each stage reads its inputs from disk, writes its outputs, and returns the
list of paths it wrote. Stages never modify their inputs. When a stage's
upstream products are missing it runs the producing stage first, so any
stage can be invoked on a freshly synthesized or captured mirror.

Mirror-level products live next to the captures (``<root>/<id>/derived``);
everything downstream of preprocessing goes under ``<out>/<id>``.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import patchwork as pw
from .config import PipelineConfig
from .errors import ConfigError, DataError, DimensionError
from .grid import (ScalarGrid, VectorGrid, load_mirror, read_grid, read_image, read_mask,
                   write_grid, write_image, write_mask)
from .metrics import aggregate, score
from .overlay import emit_overlay
from .photometric import CaptureStack, integrate_normals, solve_ps
from .predictors import load_external_probs, predict_otsu, predict_sauvola, ridge_response
from .preprocess import clip_and_rescale, highpass_depth, normalize_normals
from .stitcher import apply_object_mask, estimate_object_mask, make_weight_map, stitch, threshold_sweep
from .synth import default_spec, make_scene, write_dataset

log = logging.getLogger("engrave")

STAGES = ("synth", "ps-solve", "integrate", "preprocess", "tile", "augment",
          "predict", "stitch", "evaluate", "sweep")


def _dump(obj, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def _load_json(path: Path):
    if not path.is_file():
        raise DataError(f"{path} does not exist")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


def _derived(cfg: PipelineConfig, name: str) -> Path:
    return cfg.mirror_dir / "derived" / name


def _scalar(path: Path) -> np.ndarray:
    if not path.is_file():
        raise DataError(f"{path} does not exist")
    g = read_grid(path)
    if not isinstance(g, ScalarGrid):
        raise DataError(f"{path}: expected a single-channel grid")
    return np.asarray(g.data, dtype=np.float64)


def _threshold_tag(t: float) -> str:
    return f"t{t:.2f}"


def _ensure(cfg: PipelineConfig, path: Path, stage: str) -> None:
    if not path.exists():
        log.info("%s missing, running %s first", path, stage)
        run_stage(stage, cfg)


def object_mask_path(cfg: PipelineConfig) -> Path:
    """The mirror's object mask, or the estimate written by preprocessing."""
    for ext in (".png", ".pgm", ".etgr"):
        p = cfg.mirror_dir / "masks" / f"object{ext}"
        if p.is_file():
            return p
    return _derived(cfg, "object_estimated.png")


def _object_mask(cfg: PipelineConfig) -> np.ndarray:
    p = object_mask_path(cfg)
    _ensure(cfg, p, "preprocess")
    return read_mask(p) if p.suffix != ".etgr" else _scalar(p) >= 0.5


def _annotation(cfg: PipelineConfig, name: str | None = None) -> np.ndarray | None:
    name = cfg.metrics.annotation if name is None else name
    for ext in (".png", ".pgm"):
        p = cfg.mirror_dir / "masks" / f"{name}{ext}"
        if p.is_file():
            return read_mask(p)
    return None


# ---------------------------------------------------------------- stages

def stage_synth(cfg: PipelineConfig) -> list[Path]:
    s = cfg.synth
    spec = default_spec(cfg.seed, s.width, s.height, s.n_strokes, s.n_cracks, s.noise_sigma, s.relief_amplitude,
                        s.n_pits)
    scene = make_scene(spec, capture_noise=s.capture_noise)
    base = write_dataset(cfg.root, cfg.id, scene)
    return sorted(p for p in base.rglob("*") if p.is_file())


def stage_ps_solve(cfg: PipelineConfig) -> list[Path]:
    rec = load_mirror(cfg.root, cfg.id)
    caps = np.stack([read_image(p) for p in rec.captures])
    albedo, normals, valid = solve_ps(CaptureStack(caps, rec.lights, rec.intensities))
    out = cfg.mirror_dir / "derived"
    out.mkdir(parents=True, exist_ok=True)
    write_grid(albedo, out / "albedo.etgr")
    write_grid(VectorGrid(normals, valid), out / "normal.etgr")
    write_mask(valid, out / "validity.png")
    return [out / "albedo.etgr", out / "normal.etgr", out / "validity.png"]


def stage_integrate(cfg: PipelineConfig) -> list[Path]:
    npath = _derived(cfg, "normal.etgr")
    _ensure(cfg, npath, "ps-solve")
    g = read_grid(npath)
    if not isinstance(g, VectorGrid):
        raise DataError(f"{npath}: expected a 3-channel normal grid")
    vpath = _derived(cfg, "validity.png")
    valid = read_mask(vpath) if vpath.is_file() else None
    depth = integrate_normals(g.data, valid)
    out = _derived(cfg, "depth.etgr")
    write_grid(depth, out)
    return [out]


def stage_preprocess(cfg: PipelineConfig) -> list[Path]:
    dpath = _derived(cfg, "depth.etgr")
    _ensure(cfg, dpath, "integrate")
    depth = _scalar(dpath)
    written = []
    mpath = object_mask_path(cfg)
    if mpath.is_file():
        mask = read_mask(mpath) if mpath.suffix != ".etgr" else _scalar(mpath) >= 0.5
        if mask.shape != depth.shape:
            raise DimensionError(f"{mpath}: mask {mask.shape} does not match depth {depth.shape}")
    else:
        apath = _derived(cfg, "albedo.etgr")
        _ensure(cfg, apath, "ps-solve")
        mask = estimate_object_mask(_scalar(apath))
        write_mask(mask, mpath)
        written.append(mpath)
    hp = highpass_depth(depth, cfg.preprocess)
    clipped, stats = clip_and_rescale(hp, mask, cfg.preprocess)
    write_grid(clipped, _derived(cfg, "depth_hp.etgr"))
    written.append(_derived(cfg, "depth_hp.etgr"))
    written.append(_dump({"depth_hp": stats.to_json(), "sigma_px": cfg.preprocess.gaussian_sigma_px,
                          "clip_k": cfg.preprocess.clip_k}, _derived(cfg, "clip_stats.json")))
    npath = _derived(cfg, "normal.etgr")
    if npath.is_file():
        g = read_grid(npath)
        if isinstance(g, VectorGrid):
            unit, _ = normalize_normals(g.data, g.validity)
            write_grid(unit, _derived(cfg, "normal_unit.etgr"))
            written.append(_derived(cfg, "normal_unit.etgr"))
    return written


def _input_grid(cfg: PipelineConfig) -> np.ndarray:
    """The grid predictors see, in [0, 1]."""
    if cfg.input == "depth_hp":
        p = _derived(cfg, "depth_hp.etgr")
        _ensure(cfg, p, "preprocess")
        return _scalar(p)
    if cfg.input == "depth":
        p = _derived(cfg, "depth.etgr")
        _ensure(cfg, p, "integrate")
        out, _ = clip_and_rescale(_scalar(p), _object_mask(cfg), cfg.preprocess)
        return out
    p = _derived(cfg, "albedo.etgr")
    _ensure(cfg, p, "ps-solve")
    return np.clip(_scalar(p), 0.0, 1.0)


def _model_view(a: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    return pw.resize_half(a) if cfg.patchwork.resize else a


def stage_tile(cfg: PipelineConfig) -> list[Path]:
    grid = _input_grid(cfg)
    h, w = grid.shape
    pc = cfg.patchwork
    tw, th = pc.tile_w, pc.tile_h
    if tw is None:
        tw = pw.PAPER_TILE[0] if w >= pw.PAPER_TILE[0] else "auto"
    if th is None:
        th = pw.PAPER_TILE[1] if h >= pw.PAPER_TILE[1] else "auto"
    layout, tiles = pw.plan_tiles(w, h, tw, th, pc.patch, cfg.id)
    ann = _annotation(cfg)
    out = cfg.out_dir / "tiles"
    (out / "train").mkdir(parents=True, exist_ok=True)
    written = [_dump({"layout": layout.to_json(), "tiles": [t.to_json() | {"id": t.id} for t in tiles]},
                     out / "layout.json")]

    rng = np.random.default_rng(cfg.seed)
    train = []
    if ann is not None:
        if ann.shape != grid.shape:
            raise DimensionError(f"annotation {ann.shape} does not match input grid {grid.shape}")
        for tile in tiles:
            for ref in pw.sample_train_patches(tile, ann, pc.train_per_tile, rng, pc.patch):
                if any(r.ref == ref for r in train):
                    continue
                x = pw.extract(grid, ref, pc.pad_mode, layout)
                y = pw.extract(ann.astype(np.float64), ref, pc.pad_mode, layout)
                files = {"input": f"train/{ref.id}.etgr", "label": f"train/{ref.id}_label.etgr"}
                write_grid(_model_view(x, cfg), out / files["input"])
                write_grid(_model_view(y, cfg), out / files["label"])
                train.append(pw.ManifestRecord(ref, files))
    pw.write_manifest(train, out / "train.json")
    written.append(out / "train.json")

    evals = pw.plan_eval_patches(w, h, cfg.metrics.eval_patch, cfg.id)
    if len(evals) >= 2:
        val, test = pw.split_eval(evals, cfg.seed)
    else:
        val, test = [], evals
    pw.write_manifest(val + test, out / "eval.json")
    infer = pw.plan_inference_patches(w, h, pc.patch, pc.infer_stride, cfg.id)
    pw.write_manifest(infer, out / "infer.json")
    written += [out / "eval.json", out / "infer.json"]
    return written


def stage_augment(cfg: PipelineConfig) -> list[Path]:
    tdir = cfg.out_dir / "tiles"
    _ensure(cfg, tdir / "train.json", "tile")
    records = pw.read_manifest(tdir / "train.json")
    out = cfg.out_dir / "augment"
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)

    def load(rec):
        return _scalar(tdir / rec.files["input"]), _scalar(tdir / rec.files["label"])

    augmented = []
    for i, rec in enumerate(records):
        x, y = load(rec)
        size = x.shape[0]
        op = pw.random_standard_op(rng, size)
        xa, ya = pw.augment_standard(x, y, op)
        files = {"input": f"{rec.ref.id}_aug.etgr", "label": f"{rec.ref.id}_aug_label.etgr"}
        write_grid(xa, out / files["input"])
        write_grid(ya, out / files["label"])
        augmented.append(pw.ManifestRecord(rec.ref, files, augment=pw.op_to_json(op)))
        if len(records) < 2:
            continue
        for kind in cfg.patchwork.mix:
            j = int(rng.integers(0, len(records) - 1))
            j += j >= i  # partner differs from the sample itself
            partner = records[j]
            spec = pw.random_mixspec(rng, kind, size, partner.ref)
            xm, ym = spec.apply((x, y), load(partner))
            files = {"input": f"{rec.ref.id}_{kind}.etgr", "label": f"{rec.ref.id}_{kind}_label.etgr"}
            write_grid(xm, out / files["input"])
            write_grid(ym, out / files["label"])
            augmented.append(pw.ManifestRecord(rec.ref, files, mix=spec))
    pw.write_manifest(augmented, out / "manifest.json")
    return [out / "manifest.json"]


def stage_predict(cfg: PipelineConfig) -> list[Path]:
    tdir = cfg.out_dir / "tiles"
    pc, pred_cfg = cfg.patchwork, cfg.predictor
    method = pred_cfg.method
    out = cfg.out_dir / "predict" / method
    if method == "external":
        if pred_cfg.external_dir is None:
            raise ConfigError("method external needs --external-dir")
        ext = Path(pred_cfg.external_dir)
        if not ext.is_dir():
            raise DataError(f"external probability directory {ext} does not exist")
        mpath = ext / "manifest.json"
        if not mpath.is_file():
            _ensure(cfg, tdir / "infer.json", "tile")
            mpath = tdir / "infer.json"
        records = pw.read_manifest(mpath)
        probs = load_external_probs(ext, records, allow_half=pc.resize)
    else:
        _ensure(cfg, tdir / "infer.json", "tile")
        records = pw.read_manifest(tdir / "infer.json")
        grid = _input_grid(cfg)
        if method in ("otsu", "sauvola"):
            # global decisions on the full grid, then cut like any other map
            full = predict_otsu(grid, pred_cfg.polarity) if method == "otsu" else predict_sauvola(grid, pred_cfg)
            probs = {r.ref: pw.extract(full.astype(np.float64), r.ref) for r in records}
        else:
            probs = {}
            for r in records:
                x = _model_view(pw.extract(grid, r.ref, pc.pad_mode), cfg)
                p = ridge_response(x, pred_cfg)
                probs[r.ref] = pw.upsample_double(p) if pc.resize else p
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for ref, p in probs.items():
        write_grid(p, out / f"{ref.id}.etgr")
        manifest.append(pw.ManifestRecord(ref, {"prob": f"{ref.id}.etgr"}))
    pw.write_manifest(manifest, out / "manifest.json")
    return [out / "manifest.json"] + [out / f"{r.id}.etgr" for r in probs]


def _stitched(cfg: PipelineConfig) -> np.ndarray:
    p = cfg.out_dir / "stitch" / cfg.predictor.method / "prob_full.etgr"
    _ensure(cfg, p, "stitch")
    return _scalar(p)


def stage_stitch(cfg: PipelineConfig) -> list[Path]:
    pdir = cfg.out_dir / "predict" / cfg.predictor.method
    _ensure(cfg, pdir / "manifest.json", "predict")
    records = pw.read_manifest(pdir / "manifest.json")
    if not records:
        raise DataError(f"{pdir / 'manifest.json'} lists no patches")
    mask = _object_mask(cfg)
    h, w = mask.shape
    patches = {r.ref: _scalar(pdir / r.files.get("prob", f"{r.ref.id}.etgr")) for r in records}
    size = records[0].ref.size
    prob = stitch(patches, make_weight_map(size, cfg.stitcher.weight_eps), w, h)
    out = cfg.out_dir / "stitch" / cfg.predictor.method
    out.mkdir(parents=True, exist_ok=True)
    write_grid(prob, out / "prob_full.etgr")
    t = cfg.stitcher.threshold
    pred = apply_object_mask(prob, mask) >= t
    pred_path = out / f"pred_{_threshold_tag(t)}.png"
    write_mask(pred, pred_path)
    written = [out / "prob_full.etgr", pred_path]
    gt = _annotation(cfg)
    if gt is not None:
        table = threshold_sweep(prob, gt, mask, cfg.stitcher.sweep)
        (out / "sweep.json").write_text(table.dumps())
        written.append(out / "sweep.json")
    return written


def _score_units(cfg: PipelineConfig, pred: np.ndarray, gt: np.ndarray, prob: np.ndarray | None):
    h, w = gt.shape
    refs = pw.plan_eval_patches(w, h, cfg.metrics.eval_patch, cfg.id)
    if not refs:
        refs = [pw.PatchRef(0, 0, w, cfg.id, "test", h if h != w else None)]
    reports = []
    for ref in refs:
        s = ref.slices()
        reports.append(score(pred[s], gt[s], prob=None if prob is None else prob[s]))
    return aggregate(reports, cfg.metrics.mode)


def stage_evaluate(cfg: PipelineConfig, prediction: str | None = None) -> list[Path]:
    """Score the stitched map (or a given mask file) against the configured annotation."""
    gt = _annotation(cfg)
    if gt is None:
        raise DataError(f"annotation {cfg.metrics.annotation!r} not found in {cfg.mirror_dir / 'masks'}")
    t = cfg.stitcher.threshold
    if prediction is None:
        mask = _object_mask(cfg)
        prob = apply_object_mask(_stitched(cfg), mask)
        pred = prob >= t
        label = cfg.predictor.method
    else:
        ppath = Path(prediction)
        if not ppath.is_file():
            # bare names refer to masks of the mirror, e.g. annotation_b
            ppath = cfg.mirror_dir / "masks" / f"{prediction}.png"
        if not ppath.is_file():
            raise DataError(f"prediction {prediction} not found")
        pred = read_mask(ppath) if ppath.suffix != ".etgr" else _scalar(ppath) >= t
        prob = None
        label = ppath.stem
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and annotation {gt.shape} differ")
    report = _score_units(cfg, pred, gt, prob)
    out = cfg.out_dir / "evaluate" / label
    body = report.to_json() | {"annotation": cfg.metrics.annotation, "threshold": t,
                               "prediction": label, "fp_removed": prediction is None}
    written = [_dump(body, out / "metrics.json")]
    base_path = _derived(cfg, "depth_hp.etgr")
    base = _scalar(base_path) if base_path.is_file() else np.full(gt.shape, 0.5)
    emit_overlay(pred, base, out / "overlay.png", gt=gt)
    written.append(out / "overlay.png")
    return written


def stage_sweep(cfg: PipelineConfig) -> list[Path]:
    gt = _annotation(cfg)
    if gt is None:
        raise DataError(f"annotation {cfg.metrics.annotation!r} not found in {cfg.mirror_dir / 'masks'}")
    table = threshold_sweep(_stitched(cfg), gt, _object_mask(cfg), cfg.stitcher.sweep)
    out = cfg.out_dir / "sweep" / cfg.predictor.method / "sweep.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table.dumps())
    return [out]


_DISPATCH = {
    "synth": stage_synth,
    "ps-solve": stage_ps_solve,
    "integrate": stage_integrate,
    "preprocess": stage_preprocess,
    "tile": stage_tile,
    "augment": stage_augment,
    "predict": stage_predict,
    "stitch": stage_stitch,
    "evaluate": stage_evaluate,
    "sweep": stage_sweep,
}


def run_stage(name: str, cfg: PipelineConfig, **kwargs) -> list[Path]:
    """Run one stage and record the configuration it ran with."""
    if name not in _DISPATCH:
        raise ConfigError(f"unknown stage {name!r}; expected one of {STAGES}")
    written = _DISPATCH[name](cfg, **kwargs)
    cpath = cfg.out_dir / "configs" / f"{name}.json"
    cpath.parent.mkdir(parents=True, exist_ok=True)
    cpath.write_text(cfg.dumps())
    return written


def run_all(cfg: PipelineConfig) -> list[Path]:
    """Every stage in order; synthesis is skipped for an existing mirror."""
    written = []
    for name in STAGES:
        if name == "synth" and (cfg.mirror_dir / "lights.json").is_file():
            continue
        written += run_stage(name, cfg)
    return written
