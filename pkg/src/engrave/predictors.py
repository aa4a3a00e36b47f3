"""Per-patch engraving predictors.

Classical binarization baselines (Otsu, Sauvola), a multi-scale Hessian
valley detector used in place of a trained network, and loading of
probability maps produced by an external model.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, DimensionError
from .grid import read_grid, ScalarGrid
from .patchwork import upsample_double

METHODS = ("otsu", "sauvola", "ridge", "external")
POLARITIES = ("valleys", "ridges")
RANGE_TOL = 1e-6


@dataclass(frozen=True)
class PredictorConfig:
    method: str = "ridge"
    polarity: str = "valleys"
    sauvola_window: int = 25
    sauvola_k: float = 0.2
    sauvola_R: float = 0.5
    ridge_scales: tuple[float, ...] = (2.0, 4.0, 8.0)
    ridge_percentile: float = 99.5
    # optional lower bound on the normalizer; > 0 keeps featureless patches from being stretched to 1
    ridge_floor: float = 0.0
    external_dir: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.polarity not in POLARITIES:
            raise ConfigError(f"unknown polarity {self.polarity!r}")
        if self.sauvola_window < 3 or self.sauvola_window % 2 == 0:
            raise ConfigError(f"sauvola_window must be odd and >= 3, got {self.sauvola_window}")
        scales = tuple(float(s) for s in self.ridge_scales)
        if not scales:
            raise ConfigError("ridge_scales must not be empty")
        if any(b <= a for a, b in zip(scales, scales[1:])) or scales[0] <= 0:
            raise ConfigError(f"ridge_scales must be positive and ascending, got {scales}")
        object.__setattr__(self, "ridge_scales", scales)
        if self.ridge_floor < 0:
            raise ConfigError("ridge_floor must be >= 0")


def _histogram(grid: np.ndarray, bins: int = 256) -> np.ndarray:
    idx = np.clip((np.asarray(grid, dtype=np.float64) * bins).astype(np.int64), 0, bins - 1)
    return np.bincount(idx.ravel(), minlength=bins).astype(np.float64)


def otsu_threshold(grid: np.ndarray, bins: int = 256) -> float:
    """Global Otsu threshold on a ``bins``-bin histogram of [0, 1] data.

    The returned value is a bin edge ``k / bins``; pixels below it form the
    lower class. Ties resolve to the lowest edge.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise DataError("Otsu on an empty grid")
    hist = _histogram(grid, bins)
    if np.count_nonzero(hist) < 2:
        raise DataError("degenerate histogram: all values fall in one bin")
    centers = (np.arange(bins) + 0.5) / bins
    p = hist / hist.sum()
    w0 = np.cumsum(p)[:-1]  # class 0 = bins [0, k)
    m0 = np.cumsum(p * centers)[:-1]
    mt = m0[-1] + p[-1] * centers[-1]
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mt * w0 - m0) ** 2 / (w0 * w1)
    between[(w0 <= 0) | (w1 <= 0)] = -np.inf
    k = int(np.argmax(between)) + 1
    return k / bins


def _box_sum(integral: np.ndarray, r: int, h: int, w: int) -> np.ndarray:
    n = 2 * r + 1
    return integral[n:n + h, n:n + w] - integral[:h, n:n + w] - integral[n:n + h, :w] + integral[:h, :w]


def sauvola_map(grid: np.ndarray, cfg: PredictorConfig = PredictorConfig()) -> np.ndarray:
    """Per-pixel Sauvola threshold ``mu * (1 + k * (sigma / R - 1))``.

    Window mean and (population) deviation come from integral images over a
    symmetrically reflected border.
    """
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    r = cfg.sauvola_window // 2
    if r >= min(h, w):
        raise ConfigError(f"Sauvola window {cfg.sauvola_window} does not fit a {w}x{h} grid")
    # centring first keeps the integral-image variance from cancelling badly
    offset = float(grid.mean())
    padded = np.pad(grid - offset, r, mode="symmetric")
    ii = np.zeros((h + 2 * r + 1, w + 2 * r + 1))
    ii2 = np.zeros_like(ii)
    ii[1:, 1:] = padded.cumsum(0).cumsum(1)
    ii2[1:, 1:] = (padded**2).cumsum(0).cumsum(1)
    n = float(cfg.sauvola_window**2)
    mean = _box_sum(ii, r, h, w) / n
    var = np.maximum(_box_sum(ii2, r, h, w) / n - mean**2, 0.0)
    return (mean + offset) * (1.0 + cfg.sauvola_k * (np.sqrt(var) / cfg.sauvola_R - 1.0))


def hessian_eigenvalues(grid: np.ndarray, sigma: float):
    """Eigenvalues (l1 >= l2) of the Gaussian-smoothed Hessian at scale ``sigma``."""
    g = np.asarray(grid, dtype=np.float64)
    dxx = ndimage.gaussian_filter(g, sigma, order=(0, 2), mode="reflect")
    dyy = ndimage.gaussian_filter(g, sigma, order=(2, 0), mode="reflect")
    dxy = ndimage.gaussian_filter(g, sigma, order=(1, 1), mode="reflect")
    half_trace = 0.5 * (dxx + dyy)
    disc = np.sqrt(0.25 * (dxx - dyy) ** 2 + dxy**2)
    return half_trace + disc, half_trace - disc


def ridge_response(depth_hp: np.ndarray, cfg: PredictorConfig = PredictorConfig()) -> np.ndarray:
    """Scale-normalized multi-scale valley (or ridge) strength mapped into [0, 1].

    Per scale the response is ``sigma**2 * max(l1, 0)`` for valleys and
    ``sigma**2 * max(-l2, 0)`` for ridges; the maximum over scales is divided by
    its ``ridge_percentile``-th percentile (never less than ``ridge_floor``)
    and clamped.
    """
    if not cfg.ridge_scales:
        raise ConfigError("ridge_scales must not be empty")
    resp = None
    for s in cfg.ridge_scales:
        l1, l2 = hessian_eigenvalues(depth_hp, s)
        r = s**2 * (np.maximum(l1, 0.0) if cfg.polarity == "valleys" else np.maximum(-l2, 0.0))
        resp = r if resp is None else np.maximum(resp, r)
    scale = max(float(np.percentile(resp, cfg.ridge_percentile)), cfg.ridge_floor)
    if scale <= 0:
        return np.zeros_like(resp)
    return np.clip(resp / scale, 0.0, 1.0)


def binarize(grid: np.ndarray, threshold, polarity: str = "ridges") -> np.ndarray:
    """Foreground below ``threshold`` for valleys (dark lines), at or above it for ridges."""
    grid = np.asarray(grid, dtype=np.float64)
    t = np.asarray(threshold, dtype=np.float64)
    if t.ndim and t.shape != grid.shape:
        raise DimensionError(f"threshold map {t.shape} does not match grid {grid.shape}")
    if polarity == "valleys":
        return grid < t
    if polarity == "ridges":
        return grid >= t
    raise ConfigError(f"unknown polarity {polarity!r}")


def predict_otsu(grid: np.ndarray, polarity: str = "valleys") -> np.ndarray:
    return binarize(grid, otsu_threshold(grid), polarity)


def predict_sauvola(grid: np.ndarray, cfg: PredictorConfig = PredictorConfig()) -> np.ndarray:
    return binarize(grid, sauvola_map(grid, cfg), cfg.polarity)


def load_external_probs(directory, manifest, allow_half: bool = False) -> dict:
    """Read one ``<ref.id>.etgr`` probability patch per manifest entry.

    ``manifest`` is an iterable of PatchRef (or manifest records with a
    ``ref`` attribute). Values within 1e-6 of [0, 1] are clipped; anything
    further out is rejected. With ``allow_half`` a model-resolution patch of
    half the ref size is accepted and upsampled.
    """
    directory = Path(directory)
    out = {}
    for entry in manifest:
        ref = getattr(entry, "ref", entry)
        path = directory / f"{ref.id}.etgr"
        if not path.is_file():
            raise DataError(f"missing probability patch {path}")
        g = read_grid(path)
        if not isinstance(g, ScalarGrid):
            raise DataError(f"{path}: expected a single-channel grid")
        a = g.data
        if allow_half and a.shape == (ref.h // 2, ref.width // 2):
            a = upsample_double(a)
        if a.shape != (ref.h, ref.width):
            raise DimensionError(f"{path}: {a.shape[1]}x{a.shape[0]} does not match patch size {ref.size}")
        if a.min() < -RANGE_TOL or a.max() > 1 + RANGE_TOL:
            raise DataError(f"{path}: probabilities outside [0, 1] (range {a.min():g}..{a.max():g})")
        out[ref] = np.clip(a, 0.0, 1.0)
    return out
