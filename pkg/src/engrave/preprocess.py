"""Model-input preparation: depth high-pass, sigma clipping, normal standardization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, DimensionError

REFERENCE_PPM = 38.5


@dataclass(frozen=True)
class PreprocessConfig:
    gaussian_sigma_px: float = 16.0
    clip_k: float = 3.0
    rescale_to: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not self.gaussian_sigma_px >= 1:
            raise ConfigError(f"gaussian_sigma_px must be >= 1, got {self.gaussian_sigma_px}")
        if not self.clip_k > 0:
            raise ConfigError(f"clip_k must be > 0, got {self.clip_k}")
        lo, hi = self.rescale_to
        if not hi > lo:
            raise ConfigError(f"rescale_to must be increasing, got {self.rescale_to}")

    def sigma_for(self, resolution: float | None) -> float:
        """Filter width scaled to the capture resolution (pixels per mm)."""
        if resolution is None:
            return self.gaussian_sigma_px
        return self.gaussian_sigma_px * resolution / REFERENCE_PPM


@dataclass(frozen=True)
class ClipStats:
    mu: float
    sigma: float

    @property
    def degenerate(self) -> bool:
        return self.sigma == 0

    def to_json(self) -> dict:
        return {"mu": self.mu, "sigma": self.sigma}


def gaussian_blur(grid: np.ndarray, sigma: float) -> np.ndarray:
    # separable, truncated at 4 sigma, half-sample symmetric boundary
    return ndimage.gaussian_filter(np.asarray(grid, dtype=np.float64), sigma, mode="reflect", truncate=4.0)


def highpass_depth(depth: np.ndarray, cfg: PreprocessConfig = PreprocessConfig(), resolution=None) -> np.ndarray:
    """Remove low-frequency shape by subtracting a Gaussian-blurred copy."""
    depth = np.asarray(depth, dtype=np.float64)
    sigma = cfg.sigma_for(resolution)
    if sigma > min(depth.shape) / 2:
        raise ConfigError(f"Gaussian sigma {sigma:g} px too large for a {depth.shape[1]}x{depth.shape[0]} grid")
    if not np.isfinite(depth).all():
        raise DataError("depth contains non-finite values")
    return depth - gaussian_blur(depth, sigma)


def masked_stats(values: np.ndarray) -> ClipStats:
    if values.size == 0:
        raise DataError("no pixels selected for statistics")
    # population statistics over the whole selection
    return ClipStats(float(values.mean()), float(values.std()))


def clip_and_rescale(grid: np.ndarray, mask: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()):
    """Clamp to mu +/- k sigma (stats over ``mask`` only) and map affinely onto ``rescale_to``.

    Returns the rescaled grid and the statistics that were used.
    """
    grid = np.asarray(grid, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.shape:
        raise DimensionError(f"mask shape {mask.shape} does not match grid {grid.shape}")
    if mask.sum() < 2:
        raise DataError("clip statistics need at least two masked pixels")
    stats = masked_stats(grid[mask])
    if stats.sigma == 0:
        raise DataError("degenerate statistics: masked values are constant")
    lo = stats.mu - cfg.clip_k * stats.sigma
    hi = stats.mu + cfg.clip_k * stats.sigma
    a, b = cfg.rescale_to
    out = a + (np.clip(grid, lo, hi) - lo) * ((b - a) / (hi - lo))
    return np.clip(out, a, b), stats


def normalize_normals(normals: np.ndarray, validity: np.ndarray | None = None):
    """Scale every valid vector to unit length; zero vectors become invalid.

    Returns ``(normals, validity)`` with the sentinel (0, 0, 1) on invalid pixels.
    """
    n = np.array(normals, dtype=np.float64)
    norm = np.linalg.norm(n, axis=-1)
    valid = norm > 0
    if validity is not None:
        valid &= np.asarray(validity, dtype=bool)
    out = np.zeros_like(n)
    out[..., 2] = 1.0
    out[valid] = n[valid] / norm[valid][:, None]
    return out, valid


def channel_stats(grids, masks) -> list[ClipStats]:
    """Per-channel (mu, sigma) pooled over the masked pixels of all grids.

    Each grid is (H, W) for one channel or (H, W, C) for several. A zero sigma
    is returned as is and reported through ``ClipStats.degenerate``.
    """
    pooled = []
    for g, m in zip(grids, masks, strict=True):
        g = np.asarray(g, dtype=np.float64)
        m = np.asarray(m, dtype=bool)
        if g.shape[:2] != m.shape:
            raise DimensionError(f"mask shape {m.shape} does not match grid {g.shape[:2]}")
        sel = g[m]
        pooled.append(sel.reshape(-1, g.shape[2] if g.ndim == 3 else 1))
    values = np.concatenate(pooled, axis=0)
    if len(values) == 0:
        raise DataError("empty pooled region for channel statistics")
    return [masked_stats(values[:, c]) for c in range(values.shape[1])]
