"""Lambertian photometric stereo and normal-map integration.

Conventions: +x to the right (columns), +y down (rows), +z toward the
camera. Depth grows toward the camera, so a surface z(x, y) has the
un-normalized normal (-dz/dx, -dz/dy, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .grid import SENTINEL_NORMAL

DARK_LEVEL = 0.01
BRIGHT_LEVEL = 0.98
EPS_ALBEDO = 1e-4


@dataclass(frozen=True)
class CaptureStack:
    """N co-registered captures, shape (N, H, W), with their light directions."""

    captures: np.ndarray
    lights: np.ndarray
    intensities: np.ndarray | None = None

    def __post_init__(self):
        caps = np.asarray(self.captures, dtype=np.float64)
        lights = np.asarray(self.lights, dtype=np.float64)
        if caps.ndim != 3:
            raise DimensionError(f"captures must have shape (N, H, W), got {caps.shape}")
        if lights.shape != (caps.shape[0], 3):
            raise DimensionError(
                f"{caps.shape[0]} captures need a ({caps.shape[0]}, 3) light array, got {lights.shape}"
            )
        if caps.shape[0] < 3:
            raise DataError(f"photometric stereo needs at least 3 captures, got {caps.shape[0]}")
        if self.intensities is None:
            intens = np.ones(len(lights))
        else:
            intens = np.asarray(self.intensities, dtype=np.float64)
            if intens.shape != (len(lights),) or np.any(intens <= 0):
                raise DataError("intensities must be one positive scalar per light")
        object.__setattr__(self, "captures", caps)
        object.__setattr__(self, "lights", lights)
        object.__setattr__(self, "intensities", intens)

    @property
    def light_matrix(self) -> np.ndarray:
        """Intensity-scaled light directions, shape (N, 3)."""
        return self.lights * self.intensities[:, None]

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.light_matrix))


def solve_ps(stack: CaptureStack):
    """Per-pixel least-squares Lambertian fit.

    For every pixel solves ``min ||L g - I||`` and splits ``g`` into albedo
    ``|g|`` and unit normal ``g/|g|``. Captures darker than 1% or brighter
    than 98% of full scale are dropped for a pixel as long as three remain;
    pixels with fewer usable captures are solved from all of them and marked
    invalid.

    Returns
    -------
    albedo : (H, W) ndarray
    normals : (H, W, 3) ndarray, sentinel (0, 0, 1) where invalid
    validity : (H, W) bool ndarray
    """
    L = stack.light_matrix
    if np.linalg.matrix_rank(L) < 3:
        raise ConfigError("light directions are rank deficient; need three independent lights")
    n, h, w = stack.captures.shape
    I = stack.captures.reshape(n, -1)

    use = (I >= DARK_LEVEL) & (I <= BRIGHT_LEVEL)
    # fewer than three usable observations leave the normal undetermined:
    # solve with everything but flag the pixel
    determined = use.sum(axis=0) >= 3
    use[:, ~determined] = True
    codes = np.zeros(I.shape[1], dtype=np.int64)
    for i in range(n):
        codes = (codes << 1) | use[i]

    G = np.zeros((3, I.shape[1]))
    solvable = determined.copy()
    full = (1 << n) - 1
    for code in np.unique(codes):
        pix = np.flatnonzero(codes == code)
        if code == full:
            sel = np.ones(n, dtype=bool)
        else:
            sel = np.array([(code >> (n - 1 - i)) & 1 for i in range(n)], dtype=bool)
        Ls = L[sel]
        if np.linalg.matrix_rank(Ls) < 3:
            solvable[pix] = False
            continue
        G[:, pix] = np.linalg.pinv(Ls) @ I[np.ix_(sel, pix)]

    albedo = np.linalg.norm(G, axis=0)
    valid = solvable & (albedo >= EPS_ALBEDO)
    normals = np.zeros_like(G)
    normals[:, valid] = G[:, valid] / albedo[valid]
    valid &= normals[2] > 0
    normals[:, ~valid] = np.array(SENTINEL_NORMAL)[:, None]
    return (
        albedo.reshape(h, w),
        normals.T.reshape(h, w, 3),
        valid.reshape(h, w),
    )


def normals_from_depth(depth: np.ndarray) -> np.ndarray:
    """Unit normals from central-difference gradients of a height field."""
    zy, zx = np.gradient(np.asarray(depth, dtype=np.float64))
    n = np.stack([-zx, -zy, np.ones_like(zx)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def normals_to_gradients(normals: np.ndarray, validity: np.ndarray | None = None):
    """Surface slopes p = dz/dx, q = dz/dy; zero where invalid."""
    normals = np.asarray(normals, dtype=np.float64)
    nz = normals[..., 2]
    valid = nz > 0 if validity is None else np.asarray(validity, dtype=bool) & (nz > 0)
    p = np.zeros(nz.shape)
    q = np.zeros(nz.shape)
    p[valid] = -normals[..., 0][valid] / nz[valid]
    q[valid] = -normals[..., 1][valid] / nz[valid]
    return p, q, valid


def frankot_chellappa(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Least-squares integrable surface for a periodic gradient field (p, q)."""
    h, w = p.shape
    wx = 2 * np.pi * np.fft.fftfreq(w)[None, :]
    wy = 2 * np.pi * np.fft.fftfreq(h)[:, None]
    denom = wx**2 + wy**2
    denom[0, 0] = 1.0
    Z = (-1j * wx * np.fft.fft2(p) - 1j * wy * np.fft.fft2(q)) / denom
    Z[0, 0] = 0.0
    return np.real(np.fft.ifft2(Z))


def _mirror_extend(p, q):
    # z is extended evenly, so p flips sign across the vertical fold and q across the horizontal one
    top_p = np.hstack([p, -p[:, ::-1]])
    top_q = np.hstack([q, q[:, ::-1]])
    p_ext = np.vstack([top_p, top_p[::-1]])
    q_ext = np.vstack([top_q, -top_q[::-1]])
    return p_ext, q_ext


def integrate_normals(normals, validity=None, pad: str = "mirror") -> np.ndarray:
    """Depth map from a normal map by spectral projection onto integrable fields.

    ``pad="mirror"`` evenly extends the gradient field to 2H x 2W before the
    FFT solve (for ordinary, non-periodic maps); ``pad="periodic"`` solves on
    the grid as is. Invalid pixels contribute zero gradient. The result has
    zero mean over the valid pixels.
    """
    p, q, valid = normals_to_gradients(normals, validity)
    if not valid.any():
        raise DataError("cannot integrate normals: no valid pixels")
    h, w = p.shape
    if pad == "mirror":
        p_ext, q_ext = _mirror_extend(p, q)
        z = frankot_chellappa(p_ext, q_ext)[:h, :w]
    elif pad == "periodic":
        z = frankot_chellappa(p, q)
    else:
        raise ConfigError(f"unknown pad mode {pad!r}")
    return z - z[valid].mean()
