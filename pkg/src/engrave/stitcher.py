"""Recombination of patch predictions into a full-mirror map, object masking and threshold sweeps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, DimensionError
from .metrics import MetricsReport, score, skeletonize
from .predictors import binarize, otsu_threshold

EPS_W = 1e-3
SWEEP_THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(1, 20))


@dataclass(frozen=True)
class WeightMap:
    size: int
    weights: np.ndarray


def make_weight_map(size: int, eps: float = EPS_W) -> WeightMap:
    """Separable raised-cosine window, peaked in the centre and floored at ``eps``."""
    if size < 2:
        raise ConfigError(f"weight map size must be >= 2, got {size}")
    t = np.arange(size)
    h = 0.5 * (1 - np.cos(2 * np.pi * (t + 0.5) / size))
    h = 0.5 * (h + h[::-1])  # exact mirror symmetry despite cos rounding
    w = np.maximum(np.outer(h, h), eps)
    w.setflags(write=False)
    return WeightMap(size, w)


class Accumulator:
    """Running weighted sums for stitching; partial accumulators can be merged."""

    def __init__(self, width: int, height: int):
        self.num = np.zeros((height, width))
        self.den = np.zeros((height, width))

    def add(self, ref, patch: np.ndarray, weights: np.ndarray) -> None:
        H, W = self.num.shape
        x0, y0 = ref.origin_x, ref.origin_y
        # clip the footprint to the frame; patches may reach into padding
        xa, ya = max(x0, 0), max(y0, 0)
        xb, yb = min(x0 + ref.width, W), min(y0 + ref.h, H)
        if xa >= xb or ya >= yb:
            raise DataError(f"patch {ref.id} does not overlap the {W}x{H} frame")
        sub = (slice(ya - y0, yb - y0), slice(xa - x0, xb - x0))
        self.num[ya:yb, xa:xb] += weights[sub] * patch[sub]
        self.den[ya:yb, xa:xb] += weights[sub]

    def merge(self, other: Accumulator) -> None:
        self.num += other.num
        self.den += other.den

    def result(self) -> np.ndarray:
        out = np.zeros_like(self.num)
        covered = self.den > 0
        out[covered] = self.num[covered] / self.den[covered]
        return np.clip(out, 0.0, 1.0)

    @property
    def covered(self) -> np.ndarray:
        return self.den > 0


def stitch(patches: dict, weight_map: WeightMap, width: int, height: int) -> np.ndarray:
    """Weighted mean of overlapping patch maps; uncovered pixels are 0.

    ``patches`` maps PatchRef to an array of the ref's size. The iteration
    order only affects floating-point reassociation.
    """
    acc = Accumulator(width, height)
    for ref, p in patches.items():
        p = np.asarray(p, dtype=np.float64)
        if p.shape != (ref.h, ref.width):
            raise DimensionError(f"patch {ref.id} has shape {p.shape}, layout says {(ref.h, ref.width)}")
        if p.shape != weight_map.weights.shape:
            raise DimensionError(f"patch {ref.id} does not match the {weight_map.size}px weight map")
        if p.min() < 0 or p.max() > 1:
            raise DataError(f"patch {ref.id} has values outside [0, 1]")
        acc.add(ref, p, weight_map.weights)
    return acc.result()


def apply_object_mask(prob: np.ndarray, mask: np.ndarray) -> np.ndarray:
    prob = np.asarray(prob, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if prob.shape != mask.shape:
        raise DimensionError(f"probability map {prob.shape} and mask {mask.shape} differ")
    return np.where(mask, prob, 0.0)


def estimate_object_mask(albedo: np.ndarray) -> np.ndarray:
    """Fallback object mask: Otsu on albedo, largest 4-connected bright region, holes filled."""
    albedo = np.clip(np.asarray(albedo, dtype=np.float64), 0.0, 1.0)
    fg = albedo >= otsu_threshold(albedo)
    labels, n = ndimage.label(fg)
    if n == 0:
        raise DataError("no foreground found in albedo")
    sizes = np.bincount(labels.ravel())[1:]
    largest = labels == (int(np.argmax(sizes)) + 1)
    return ndimage.binary_fill_holes(largest)


@dataclass
class SweepTable:
    thresholds: tuple[float, ...]
    masked: list[MetricsReport] = field(default_factory=list)
    unmasked: list[MetricsReport] = field(default_factory=list)

    def __post_init__(self):
        t = np.asarray(self.thresholds)
        if np.any(np.diff(t) <= 0) or t.min() < 0 or t.max() > 1:
            raise ConfigError("sweep thresholds must be strictly increasing within [0, 1]")

    def pfm(self, masked: bool = True) -> list[float | None]:
        return [r.pfm for r in (self.masked if masked else self.unmasked)]

    def best(self, masked: bool = True) -> int | None:
        vals = [-1.0 if v is None else v for v in self.pfm(masked)]
        return None if max(vals) < 0 else int(np.argmax(vals))

    def to_json(self) -> dict:
        bm, bu = self.best(True), self.best(False)
        rows = []
        for i, t in enumerate(self.thresholds):
            m, u = self.masked[i], self.unmasked[i]
            rows.append({
                "threshold": t,
                "fp_removed": m.to_json(),
                "fp_not_removed": u.to_json(),
                "undefined": m.pfm is None or u.pfm is None,
                "best_fp_removed": i == bm,
                "best_fp_not_removed": i == bu,
            })
        pm = [v for v in self.pfm(True) if v is not None]
        return {
            "thresholds": list(self.thresholds),
            "rows": rows,
            "best_threshold_fp_removed": None if bm is None else self.thresholds[bm],
            "best_threshold_fp_not_removed": None if bu is None else self.thresholds[bu],
            "pfm_spread_fp_removed": (max(pm) - min(pm)) if pm else None,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"


def threshold_sweep(prob, gt, mask, thresholds=SWEEP_THRESHOLDS) -> SweepTable:
    """Score ``prob >= t`` for every threshold, with and without object masking."""
    prob = np.asarray(prob, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    if prob.shape != gt.shape:
        raise DimensionError(f"probability map {prob.shape} and ground truth {gt.shape} differ")
    masked_prob = apply_object_mask(prob, mask)
    table = SweepTable(tuple(thresholds))
    skel = skeletonize(gt)
    for t in table.thresholds:
        table.unmasked.append(score(binarize(prob, t, "ridges"), gt, skeleton=skel))
        table.masked.append(score(binarize(masked_prob, t, "ridges"), gt, skeleton=skel))
    return table
