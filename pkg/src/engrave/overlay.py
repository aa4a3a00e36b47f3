"""Agreement overlays for visual review of predictions."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import DimensionError

GREEN = (0, 200, 0)
RED = (220, 0, 0)
BLACK = (0, 0, 0)


def overlay_rgb(pred, base, gt=None, threshold: float = 0.5) -> np.ndarray:
    """Colour-coded overlay as uint8 RGB.

    ``pred`` is a mask or a probability map (binarized at ``threshold``).
    Prediction and ground truth together are black, prediction only green,
    ground truth only red; everything else shows ``base`` in grey.
    """
    pred = np.asarray(pred)
    base = np.asarray(base, dtype=np.float64)
    if pred.shape != base.shape:
        raise DimensionError(f"prediction {pred.shape} and base {base.shape} differ")
    p = pred if pred.dtype == bool else pred >= threshold
    g = np.zeros_like(p) if gt is None else np.asarray(gt, dtype=bool)
    if g.shape != p.shape:
        raise DimensionError(f"ground truth {g.shape} and prediction {p.shape} differ")
    grey = np.round(np.clip(base, 0.0, 1.0) * 255).astype(np.uint8)
    rgb = np.repeat(grey[..., None], 3, axis=2)
    rgb[p & g] = BLACK
    rgb[p & ~g] = GREEN
    rgb[~p & g] = RED
    return rgb


def emit_overlay(pred, base, path, gt=None, threshold: float = 0.5) -> np.ndarray:
    rgb = overlay_rgb(pred, base, gt, threshold)
    Image.fromarray(rgb, mode="RGB").save(path)
    return rgb
