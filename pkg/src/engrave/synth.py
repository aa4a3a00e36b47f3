"""Synthetic engraved mirrors with exact ground truth.

A disk-shaped height field with low-frequency bowing, engraved strokes
(labelled), cracks and corrosion pits (unlabelled damage) of Gaussian
cross-section, plus additive noise; rendered under known distant lights with a Lambertian model.
Depth is measured in pixel units.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError
from .grid import lights_to_json, write_grid, write_image, write_mask
from .photometric import normals_from_depth

FWHM = 2.0 * math.sqrt(2.0 * math.log(2.0))
WIDTH_MIN, WIDTH_MAX = 6.0, 12.0
DEPTH_MIN, DEPTH_MAX = 1.3, 1.8
CRACK_DEPTH_MIN, CRACK_DEPTH_MAX = 0.6, 1.0
PIT_RADIUS_MIN, PIT_RADIUS_MAX = 1.5, 4.0


@dataclass(frozen=True)
class Stroke:
    points: tuple[tuple[float, float], ...]  # (x, y) polyline vertices
    width: float  # full width at half depth, px
    depth: float  # peak depression, px

    def __post_init__(self):
        object.__setattr__(self, "points", tuple((float(x), float(y)) for x, y in self.points))
        if len(self.points) < 2:
            raise ConfigError("a polyline needs at least two points")
        if self.width < 1:
            raise ConfigError(f"stroke width must be >= 1 px, got {self.width}")
        if self.depth <= 0:
            raise ConfigError("stroke depth must be positive")


@dataclass(frozen=True)
class SynthSpec:
    width: int = 1024
    height: int = 1024
    disk_radius: float = 440.0
    disk_height: float = 6.0
    rim_width: float = 12.0
    bow_amplitude: float = 30.0
    strokes: tuple[Stroke, ...] = ()
    cracks: tuple[Stroke, ...] = ()
    # (x, y, radius, depth): round Gaussian depressions, radius is the std in px
    pits: tuple[tuple[float, float, float, float], ...] = ()
    noise_sigma: float = 0.0
    relief_amplitude: float = 0.0  # std of band-limited corrosion relief, px
    relief_scale: float = 12.0  # correlation length of that relief, px
    albedo_disk: float = 0.6
    albedo_background: float = 0.12
    seed: int = 0

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ConfigError("synthetic image must be at least 2x2")
        if self.disk_radius <= 0:
            raise ConfigError("disk_radius must be positive")
        object.__setattr__(self, "strokes", tuple(_as_stroke(s) for s in self.strokes))
        object.__setattr__(self, "cracks", tuple(_as_stroke(s) for s in self.cracks))
        pits = tuple(tuple(float(v) for v in p) for p in self.pits)
        if any(len(p) != 4 or p[2] <= 0 or p[3] <= 0 for p in pits):
            raise ConfigError("pits are (x, y, radius, depth) with positive radius and depth")
        object.__setattr__(self, "pits", pits)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> SynthSpec:
        d = dict(d)
        d["strokes"] = tuple(Stroke(**s) for s in d.get("strokes", ()))
        d["cracks"] = tuple(Stroke(**s) for s in d.get("cracks", ()))
        return cls(**d)


def _as_stroke(s) -> Stroke:
    if isinstance(s, Stroke):
        return s
    if isinstance(s, dict):
        return Stroke(**s)
    points, width, depth = s
    return Stroke(points, width, depth)


def polyline_distance(points, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Euclidean distance from pixel centres (xs, ys) to a polyline."""
    pts = np.asarray(points, dtype=np.float64)
    best = np.full(xs.shape, np.inf)
    for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
        dx, dy = bx - ax, by - ay
        ll = dx * dx + dy * dy
        if ll == 0:
            t = np.zeros(xs.shape)
        else:
            t = np.clip(((xs - ax) * dx + (ys - ay) * dy) / ll, 0.0, 1.0)
        d2 = (xs - ax - t * dx) ** 2 + (ys - ay - t * dy) ** 2
        np.minimum(best, d2, out=best)
    return np.sqrt(best)


def _depression(stroke: Stroke, shape) -> tuple[np.ndarray, tuple[slice, slice]] | None:
    h, w = shape
    s = stroke.width / FWHM
    reach = 4.0 * s + 1.0
    pts = np.asarray(stroke.points)
    x0 = max(int(math.floor(pts[:, 0].min() - reach)), 0)
    x1 = min(int(math.ceil(pts[:, 0].max() + reach)) + 1, w)
    y0 = max(int(math.floor(pts[:, 1].min() - reach)), 0)
    y1 = min(int(math.ceil(pts[:, 1].max() + reach)) + 1, h)
    if x0 >= x1 or y0 >= y1:
        return None
    ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    d = polyline_distance(stroke.points, xs, ys)
    return stroke.depth * np.exp(-(d**2) / (2 * s * s)), (slice(y0, y1), slice(x0, x1))


def _check_inside(spec: SynthSpec) -> None:
    cx, cy = spec.center
    for i, s in enumerate(spec.strokes):
        pts = np.asarray(s.points)
        r = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
        if r.max() + s.width / 2 > spec.disk_radius:
            raise DataError(f"stroke {i} leaves the disk (reaches r={r.max() + s.width / 2:.1f})")


def generate_surface(spec: SynthSpec):
    """Height field plus labels.

    Returns
    -------
    depth : (H, W) ndarray
    gt : (H, W) bool, pixels where a stroke is at least half its peak depth
    object_mask : (H, W) bool, the disk
    """
    _check_inside(spec)
    h, w = spec.height, spec.width
    cx, cy = spec.center
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    r = np.hypot(xs - cx, ys - cy)
    object_mask = r <= spec.disk_radius
    # cosine rim: exactly flat inside, exactly zero outside, C1 across the edge
    ramp = np.clip((r - spec.disk_radius) / spec.rim_width + 0.5, 0.0, 1.0)
    plateau = 0.5 * (1.0 + np.cos(np.pi * ramp))
    rho = np.minimum(r / spec.disk_radius, 1.0)
    depth = plateau * (spec.disk_height + spec.bow_amplitude * (1.0 - rho**2))

    carve = np.zeros((h, w))
    gt = np.zeros((h, w), dtype=bool)
    for stroke in spec.strokes:
        res = _depression(stroke, (h, w))
        if res is None:
            continue
        dep, sl = res
        np.maximum(carve[sl], dep, out=carve[sl])
        gt[sl] |= dep >= 0.5 * stroke.depth
    for crack in spec.cracks:
        res = _depression(crack, (h, w))
        if res is None:
            continue
        dep, sl = res
        np.maximum(carve[sl], dep, out=carve[sl])
    for px, py, pr, pd in spec.pits:
        reach = 4.0 * pr + 1.0
        x0, x1 = max(int(px - reach), 0), min(int(px + reach) + 2, w)
        y0, y1 = max(int(py - reach), 0), min(int(py + reach) + 2, h)
        if x0 >= x1 or y0 >= y1:
            continue
        d2 = (xs[y0:y1, x0:x1] - px) ** 2 + (ys[y0:y1, x0:x1] - py) ** 2
        np.maximum(carve[y0:y1, x0:x1], pd * np.exp(-d2 / (2 * pr * pr)), out=carve[y0:y1, x0:x1])
    depth = depth - carve
    rng = np.random.default_rng(spec.seed)
    if spec.relief_amplitude > 0:
        relief = ndimage.gaussian_filter(rng.normal(size=(h, w)), spec.relief_scale, mode="wrap")
        depth = depth + plateau * relief * (spec.relief_amplitude / relief.std())
    if spec.noise_sigma > 0:
        depth = depth + rng.normal(0.0, spec.noise_sigma, size=(h, w))
    return depth, gt & object_mask, object_mask


def make_albedo(spec: SynthSpec, object_mask: np.ndarray | None = None) -> np.ndarray:
    """Bright disk with mild low-frequency patina on a dark background."""
    h, w = spec.height, spec.width
    cx, cy = spec.center
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    if object_mask is None:
        object_mask = np.hypot(xs - cx, ys - cy) <= spec.disk_radius
    patina = 0.05 * np.sin(2 * np.pi * xs / (0.9 * w)) * np.cos(2 * np.pi * ys / (1.1 * h))
    return np.where(object_mask, spec.albedo_disk + patina, spec.albedo_background)


def default_lights(n: int = 8, slant_deg: float = 40.0, azimuth0_deg: float = 0.0) -> np.ndarray:
    """``n`` unit light directions on a cone of the given slant around +z."""
    if n < 3:
        raise ConfigError("need at least 3 lights")
    slant = math.radians(slant_deg)
    az = np.radians(azimuth0_deg) + 2 * np.pi * np.arange(n) / n
    L = np.stack([np.sin(slant) * np.cos(az), np.sin(slant) * np.sin(az), np.full(n, np.cos(slant))], axis=1)
    return L / np.linalg.norm(L, axis=1, keepdims=True)


def render_captures(depth, albedo, lights, intensities=None, noise_sigma: float = 0.0, seed=None) -> np.ndarray:
    """Lambertian captures ``clip(albedo * max(l . n, 0) + noise, 0, 1)``, shape (N, H, W)."""
    lights = np.asarray(lights, dtype=np.float64)
    if lights.ndim != 2 or lights.shape[1] != 3 or len(lights) < 3:
        raise ConfigError("render_captures needs at least 3 light vectors")
    intensities = np.ones(len(lights)) if intensities is None else np.asarray(intensities, dtype=np.float64)
    n = normals_from_depth(depth)
    shading = np.maximum(np.einsum("hwc,nc->nhw", n, lights), 0.0) * intensities[:, None, None]
    caps = np.asarray(albedo, dtype=np.float64)[None] * shading
    if noise_sigma > 0:
        caps = caps + np.random.default_rng(seed).normal(0.0, noise_sigma, size=caps.shape)
    return np.clip(caps, 0.0, 1.0)


def _smooth_curve(rng, cx, cy, reach, n_pts=60):
    """Random smooth open curve: a wobbling arc segment around (cx, cy)."""
    r0 = rng.uniform(0.2, 0.85) * reach
    a0 = rng.uniform(0, 2 * np.pi)
    span = rng.uniform(0.6, 1.6)
    t = np.linspace(0, 1, n_pts)
    wob = rng.uniform(0.04, 0.12) * reach * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
    rr = np.clip(r0 + wob, 0.05 * reach, reach)
    aa = a0 + span * t
    return list(zip(cx + rr * np.cos(aa), cy + rr * np.sin(aa)))


def _line(rng, cx, cy, reach):
    a = rng.uniform(0, 2 * np.pi)
    off = rng.uniform(-0.6, 0.6) * reach
    half = math.sqrt(max(reach**2 - off**2, 1.0)) * rng.uniform(0.4, 0.95)
    px, py = cx + off * math.cos(a + np.pi / 2), cy + off * math.sin(a + np.pi / 2)
    return [(px - half * math.cos(a), py - half * math.sin(a)), (px + half * math.cos(a), py + half * math.sin(a))]


def _crack(rng, cx, cy, reach, n_pts=25):
    r = rng.uniform(0.1, 0.8) * reach
    a = rng.uniform(0, 2 * np.pi)
    x, y = cx + r * math.cos(a), cy + r * math.sin(a)
    heading = rng.uniform(0, 2 * np.pi)
    pts = [(x, y)]
    for _ in range(n_pts):
        heading += rng.normal(0, 0.6)
        step = rng.uniform(4, 9)
        nx, ny = x + step * math.cos(heading), y + step * math.sin(heading)
        if math.hypot(nx - cx, ny - cy) > reach:
            break
        x, y = nx, ny
        pts.append((x, y))
    if len(pts) < 2:
        pts.append((x + 1.0, y))
    return pts


def default_spec(seed: int = 0, width: int = 1024, height: int = 1024, n_strokes: int = 14,
                 n_cracks: int = 12, noise_sigma: float = 0.02, relief_amplitude: float = 0.45,
                 n_pits: int = 600) -> SynthSpec:
    """Desk-scale engraved mirror: a border ring, figure strokes, cracks, pits and noise."""
    rng = np.random.default_rng(seed)
    radius = 0.43 * min(width, height)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    strokes = []
    ring_r = radius - 30.0
    ang = np.linspace(0, 2 * np.pi, 361)
    strokes.append(Stroke(list(zip(cx + ring_r * np.cos(ang), cy + ring_r * np.sin(ang))), 10.0, 1.5))
    inner = ring_r - 25.0
    for k in range(n_strokes):
        pts = _smooth_curve(rng, cx, cy, inner) if k % 3 else _line(rng, cx, cy, inner)
        strokes.append(Stroke(pts, float(rng.uniform(WIDTH_MIN, WIDTH_MAX)), float(rng.uniform(DEPTH_MIN, DEPTH_MAX))))
    cracks = [Stroke(_crack(rng, cx, cy, radius - 10.0), float(rng.uniform(1.5, 2.5)),
                     float(rng.uniform(CRACK_DEPTH_MIN, CRACK_DEPTH_MAX))) for _ in range(n_cracks)]
    pits = []
    for _ in range(n_pits):
        pr = rng.uniform(0, radius - 10.0) ** 0.5 * (radius - 10.0) ** 0.5  # uniform over the disk area
        pa = rng.uniform(0, 2 * np.pi)
        pits.append((cx + pr * math.cos(pa), cy + pr * math.sin(pa), float(rng.uniform(PIT_RADIUS_MIN, PIT_RADIUS_MAX)),
                     float(rng.uniform(CRACK_DEPTH_MIN, CRACK_DEPTH_MAX))))
    return SynthSpec(width=width, height=height, disk_radius=radius, strokes=tuple(strokes),
                     cracks=tuple(cracks), pits=tuple(pits), noise_sigma=noise_sigma, relief_amplitude=relief_amplitude,
                     seed=seed)


@dataclass
class SynthScene:
    spec: SynthSpec
    depth: np.ndarray
    gt: np.ndarray
    object_mask: np.ndarray
    albedo: np.ndarray
    lights: np.ndarray
    captures: np.ndarray = field(repr=False, default=None)


def make_scene(spec: SynthSpec, lights=None, capture_noise: float = 0.0) -> SynthScene:
    depth, gt, obj = generate_surface(spec)
    albedo = make_albedo(spec, obj)
    lights = default_lights() if lights is None else np.asarray(lights, dtype=np.float64)
    caps = render_captures(depth, albedo, lights, noise_sigma=capture_noise, seed=spec.seed + 1)
    return SynthScene(spec, depth, gt, obj, albedo, lights, caps)


def write_dataset(root, mirror_id: str, scene: SynthScene) -> Path:
    """Write a scene in the standard dataset layout; ground-truth surfaces go to ``truth/``."""
    base = Path(root) / mirror_id
    for sub in ("captures", "masks", "truth"):
        (base / sub).mkdir(parents=True, exist_ok=True)
    for i, cap in enumerate(scene.captures):
        write_image(cap, base / "captures" / f"capture_{i:03d}.png", bits=16)
    (base / "lights.json").write_text(json.dumps(lights_to_json(scene.lights), indent=1) + "\n")
    write_mask(scene.object_mask, base / "masks" / "object.png")
    write_mask(scene.gt, base / "masks" / "annotation_a.png")
    write_grid(scene.depth, base / "truth" / "depth.etgr")
    write_grid(scene.albedo, base / "truth" / "albedo.etgr")
    (base / "truth" / "synth.json").write_text(json.dumps(scene.spec.to_json(), indent=1) + "\n")
    return base
