"""Segmentation scores (IoU, Dice, FM, pseudo-FM) and evaluable loss functions."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DimensionError

PROB_EPS = 1e-7
_EIGHT = np.ones((3, 3), dtype=bool)

# neighbour offsets P2..P9, clockwise from north (y grows downward)
_NEIGHBOURS = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


def _zhang_suen_luts():
    """Deletion tables indexed by the 8-bit code sum(P_{k+2} << k).

    The neighbour-count floor is 3 rather than 2 (the Lu-Wang refinement), so
    stroke ends and diagonal runs are not eaten away.
    """
    step1 = np.zeros(256, dtype=bool)
    step2 = np.zeros(256, dtype=bool)
    for code in range(256):
        p = [(code >> k) & 1 for k in range(8)]  # p[0]=P2 ... p[7]=P9
        b = sum(p)
        a = sum(1 for k in range(8) if p[k] == 0 and p[(k + 1) % 8] == 1)
        if not (3 <= b <= 6 and a == 1):
            continue
        p2, p4, p6, p8 = p[0], p[2], p[4], p[6]
        step1[code] = p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
        step2[code] = p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
    return step1, step2


_LUT1, _LUT2 = _zhang_suen_luts()


def _neighbour_codes(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img, 1).astype(np.uint8)
    h, w = img.shape
    code = np.zeros((h, w), dtype=np.int64)
    for k, (dy, dx) in enumerate(_NEIGHBOURS):
        code |= padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w].astype(np.int64) << k
    return code


def _is_simple(win: np.ndarray) -> bool:
    # 8-connectivity number of the centre of a 3x3 window (Yokoi); 1 means deletable
    x = [win[1, 2], win[0, 2], win[0, 1], win[0, 0], win[1, 0], win[2, 0], win[2, 1], win[2, 2]]
    xb = [1 - int(v) for v in x]
    n = sum(xb[k] - xb[k] * xb[(k + 1) % 8] * xb[(k + 2) % 8] for k in (0, 2, 4, 6))
    return n == 1


def _prune_blocks(img: np.ndarray) -> None:
    """Delete redundant pixels of 2x2 blocks in raster order, keeping topology."""
    changed = True
    while changed:
        changed = False
        blocks = img[:-1, :-1] & img[1:, :-1] & img[:-1, 1:] & img[1:, 1:]
        if not blocks.any():
            return
        for by, bx in zip(*np.nonzero(blocks)):
            for y, x in ((by, bx), (by, bx + 1), (by + 1, bx), (by + 1, bx + 1)):
                if not img[y, x]:
                    continue
                win = np.zeros((3, 3), dtype=bool)
                y0, x0 = max(y - 1, 0), max(x - 1, 0)
                sub = img[y0:y + 2, x0:x + 2]
                win[y0 - y + 1:y0 - y + 1 + sub.shape[0], x0 - x + 1:x0 - x + 1 + sub.shape[1]] = sub
                if win.sum() - 1 >= 2 and _is_simple(win):
                    img[y, x] = False
                    changed = True
                    break


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning to an 8-connected, unit-width skeleton.

    Two safeguards are added to the classic parallel scheme: a component that
    would be erased completely keeps its first pixel, and leftover 2x2 blocks
    are pruned of topologically simple pixels.
    """
    img = np.array(mask, dtype=bool)
    if img.ndim != 2:
        raise DimensionError("skeletonize expects a 2-D mask")
    if not img.any():
        return img
    while True:
        changed = False
        for lut in (_LUT1, _LUT2):
            cand = img & lut[_neighbour_codes(img)]
            if not cand.any():
                continue
            after = img & ~cand
            labels, n = ndimage.label(img, structure=_EIGHT)
            alive = np.zeros(n + 1, dtype=bool)
            alive[labels[after]] = True
            dead = np.flatnonzero(~alive[1:]) + 1
            if dead.size:
                first = ndimage.minimum_position(np.arange(labels.size).reshape(labels.shape), labels, dead)
                for pos in first:
                    after[pos] = True
            if (after != img).any():
                img = after
                changed = True
        if not changed:
            break
    _prune_blocks(img)
    return img


def _ratio(num, den):
    return num / den if den > 0 else None


def _harmonic(p, r):
    if p is None or r is None:
        return None
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    skel_tp: int
    skel_n: int
    precision: float | None
    recall: float | None
    p_recall: float | None
    fm: float | None
    pfm: float | None
    iou: float | None
    dice_macro: float | None
    n_units: int = 1
    mode: str = "unit"

    @classmethod
    def from_counts(cls, tp, fp, fn, tn, skel_tp, skel_n, dice=None, n_units=1, mode="unit"):
        gt_n = tp + fn
        # an empty prediction scores precision 0 rather than undefined
        precision = tp / (tp + fp) if tp + fp > 0 else (0.0 if gt_n > 0 else None)
        recall = _ratio(tp, gt_n)
        p_recall = _ratio(skel_tp, skel_n)
        if dice is None:
            dice = _ratio(2 * tp, 2 * tp + fp + fn)
        return cls(
            int(tp), int(fp), int(fn), int(tn), int(skel_tp), int(skel_n),
            precision, recall, p_recall,
            _harmonic(precision, recall), _harmonic(precision, p_recall),
            _ratio(tp, tp + fp + fn), dice, n_units, mode,
        )

    @property
    def counts(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "skel_tp": self.skel_tp, "skel_n": self.skel_n}

    def to_json(self) -> dict:
        scores = {"iou": self.iou, "dice": self.dice_macro, "fm": self.fm, "pfm": self.pfm,
                  "precision": self.precision, "recall": self.recall, "p_recall": self.p_recall}
        return {
            **scores,
            "percent": {k: None if v is None else 100.0 * v for k, v in scores.items()},
            "counts": self.counts,
            "n_units": self.n_units,
            "mode": self.mode,
        }


def score(pred, gt, eval_mask=None, prob=None, skeleton=None) -> MetricsReport:
    """Confusion counts and scores for one unit (patch or whole mirror).

    p-recall is measured against the Zhang-Suen skeleton of the ground truth.
    When ``eval_mask`` is given, everything is restricted to it (the skeleton
    is computed from the restricted ground truth). Dice is the soft Dice of
    ``prob`` when provided, binary Dice otherwise. A precomputed ``skeleton``
    of the (restricted) ground truth may be passed to skip thinning.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if eval_mask is not None:
        eval_mask = np.asarray(eval_mask, dtype=bool)
        if eval_mask.shape != gt.shape:
            raise DimensionError("eval_mask shape differs from ground truth")
        pred = pred & eval_mask
        gt = gt & eval_mask
        n_eval = int(eval_mask.sum())
    else:
        n_eval = gt.size
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = n_eval - tp - fp - fn
    skel = skeletonize(gt) if skeleton is None else np.asarray(skeleton, dtype=bool) & gt
    skel_n = int(skel.sum())
    skel_tp = int(np.count_nonzero(pred & skel))
    dice = None
    if prob is not None:
        prob = np.asarray(prob, dtype=np.float64)
        if prob.shape != gt.shape:
            raise DimensionError("prob shape differs from ground truth")
        if eval_mask is not None:
            prob = np.where(eval_mask, prob, 0.0)
        den = prob.sum() + gt.sum()
        dice = float(2 * (prob * gt).sum() / den) if den > 0 else None
    return MetricsReport.from_counts(tp, fp, fn, tn, skel_tp, skel_n, dice=dice)


_SCORES = ("precision", "recall", "p_recall", "fm", "pfm", "iou")


def _mean_defined(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def aggregate(reports, mode: str = "micro") -> MetricsReport:
    """Combine unit reports.

    ``micro`` pools the counts and scores once; ``macro`` averages each
    per-unit score over the units where it is defined. ``dice_macro`` is a
    per-unit mean in both modes.
    """
    reports = list(reports)
    if not reports:
        raise ConfigError("aggregate needs at least one report")
    if mode not in ("micro", "macro"):
        raise ConfigError(f"unknown aggregation mode {mode!r}")
    totals = {k: sum(getattr(r, k) for r in reports) for k in ("tp", "fp", "fn", "tn", "skel_tp", "skel_n")}
    n_units = sum(r.n_units for r in reports)
    dice = _mean_defined(r.dice_macro for r in reports)
    pooled = MetricsReport.from_counts(**totals, dice=dice, n_units=n_units, mode=mode)
    if mode == "micro":
        return pooled
    return replace(pooled, **{k: _mean_defined(getattr(r, k) for r in reports) for k in _SCORES})


def _check_pair(prob, gt):
    prob = np.asarray(prob, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if prob.shape != gt.shape:
        raise DimensionError(f"prediction {prob.shape} and target {gt.shape} differ")
    return prob, gt


def loss_bce(prob, gt) -> float:
    prob, gt = _check_pair(prob, gt)
    p = np.clip(prob, PROB_EPS, 1 - PROB_EPS)
    return float(np.mean(-(gt * np.log(p) + (1 - gt) * np.log1p(-p))))


def loss_focal(prob, gt, gamma: float = 2.0) -> float:
    if gamma < 0:
        raise ConfigError("focal gamma must be >= 0")
    prob, gt = _check_pair(prob, gt)
    p = np.clip(prob, PROB_EPS, 1 - PROB_EPS)
    return float(np.mean(-(gt * (1 - p) ** gamma * np.log(p) + (1 - gt) * p**gamma * np.log1p(-p))))


def loss_dice(prob, gt, smooth: float = 1.0) -> float:
    prob, gt = _check_pair(prob, gt)
    return float(1 - (2 * (prob * gt).sum() + smooth) / (prob.sum() + gt.sum() + smooth))
