"""Tile and patch geometry, resampling, augmentation and patch manifests.

All origins are expressed in full-resolution coordinates of the unpadded
image. Tiles produced by :func:`plan_tiles` may start at negative offsets
when the frame is padded; :func:`extract` synthesizes those margin pixels.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DimensionError

PAPER_TILE = (2988, 2240)
PATCH = 512
MIXUP_RANGE = (0.4, 0.6)
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class PatchRef:
    origin_x: int
    origin_y: int
    size: int
    source: str = ""
    split: str = "test"
    height: int | None = None  # only set for non-square tiles

    def __post_init__(self):
        if self.size <= 0 or (self.height is not None and self.height <= 0):
            raise ConfigError("patch size must be positive")
        if self.split not in SPLITS:
            raise ConfigError(f"unknown split {self.split!r}")

    @property
    def width(self) -> int:
        return self.size

    @property
    def h(self) -> int:
        return self.size if self.height is None else self.height

    @property
    def id(self) -> str:
        hpart = "" if self.height is None else f"x{self.height}"
        return f"{self.source}_x{self.origin_x}_y{self.origin_y}_s{self.size}{hpart}"

    def slices(self) -> tuple[slice, slice]:
        return (
            slice(self.origin_y, self.origin_y + self.h),
            slice(self.origin_x, self.origin_x + self.size),
        )

    def to_json(self) -> dict:
        d = asdict(self)
        if d["height"] is None:
            del d["height"]
        return d

    @classmethod
    def from_json(cls, d: dict) -> PatchRef:
        return cls(
            int(d["origin_x"]), int(d["origin_y"]), int(d["size"]),
            str(d.get("source", "")), str(d.get("split", "test")),
            None if d.get("height") is None else int(d["height"]),
        )


@dataclass(frozen=True)
class PatchLayout:
    full_w: int
    full_h: int
    pad_x: int
    pad_y: int
    tile_w: int
    tile_h: int
    tile_stride_x: int
    tile_stride_y: int
    patch: int = PATCH
    patch_stride: int = PATCH // 2

    def __post_init__(self):
        if min(self.tile_stride_x, self.tile_stride_y, self.patch_stride) <= 0:
            raise ConfigError("strides must be positive")
        if self.patch > min(self.tile_w, self.tile_h):
            raise ConfigError(f"patch {self.patch} larger than tile {self.tile_w}x{self.tile_h}")
        if (self.padded_w - self.tile_w) % self.tile_stride_x or (self.padded_h - self.tile_h) % self.tile_stride_y:
            raise ConfigError("padded frame is not an integer number of tile strides")

    @property
    def padded_w(self) -> int:
        return self.full_w + self.pad_x

    @property
    def padded_h(self) -> int:
        return self.full_h + self.pad_y

    @property
    def pad_left(self) -> int:
        return self.pad_x // 2

    @property
    def pad_top(self) -> int:
        return self.pad_y // 2

    def padded_bounds(self) -> tuple[int, int, int, int]:
        """(x0, y0, x1, y1) of the padded frame in full-resolution coordinates."""
        return (-self.pad_left, -self.pad_top, self.full_w + self.pad_x - self.pad_left,
                self.full_h + self.pad_y - self.pad_top)

    def contains(self, ref: PatchRef) -> bool:
        x0, y0, x1, y1 = self.padded_bounds()
        return (ref.origin_x >= x0 and ref.origin_y >= y0
                and ref.origin_x + ref.width <= x1 and ref.origin_y + ref.h <= y1)

    def to_json(self) -> dict:
        return asdict(self)


def auto_tile(dim: int, patch: int = PATCH) -> int:
    """Smallest even length >= dim/3 (3x3 tiles at half stride), at least one patch."""
    t = 2 * math.ceil(dim / 6)
    return max(t, patch + patch % 2)


def _tile_dim(value, dim, default, patch):
    if value is None:
        return default
    if value == "auto":
        return auto_tile(dim, patch)
    return int(value)


def plan_tiles(full_w: int, full_h: int, tile_w: int | str | None = None, tile_h: int | str | None = None,
               patch: int = PATCH, source: str = ""):
    """Half-overlapping tiles over a minimally padded frame.

    Tiles default to 2988x2240; ``"auto"`` picks the smallest even length of
    at least a third of the image axis (never below one patch). Each axis is
    padded by the smallest amount that makes
    ``(dim - tile) % (tile / 2) == 0``; padding is split evenly between the
    two sides. Returns the layout and the row-major tile refs.
    """
    tile_w = _tile_dim(tile_w, full_w, PAPER_TILE[0], patch)
    tile_h = _tile_dim(tile_h, full_h, PAPER_TILE[1], patch)
    if tile_w % 2 or tile_h % 2:
        raise ConfigError(f"tile dims must be even for a half-size stride, got {tile_w}x{tile_h}")
    if full_w < tile_w or full_h < tile_h:
        raise DataError(f"image {full_w}x{full_h} smaller than one {tile_w}x{tile_h} tile")
    sx, sy = tile_w // 2, tile_h // 2
    pad_x = (-(full_w - tile_w)) % sx
    pad_y = (-(full_h - tile_h)) % sy
    layout = PatchLayout(full_w, full_h, pad_x, pad_y, tile_w, tile_h, sx, sy, patch, patch // 2)
    nx = (layout.padded_w - tile_w) // sx + 1
    ny = (layout.padded_h - tile_h) // sy + 1
    refs = [
        PatchRef(-layout.pad_left + i * sx, -layout.pad_top + j * sy, tile_w, source, "train",
                 None if tile_h == tile_w else tile_h)
        for j in range(ny)
        for i in range(nx)
    ]
    return layout, refs


def plan_eval_patches(full_w: int, full_h: int, patch: int = PATCH, source: str = "", split: str = "test"):
    """Disjoint patches anchored at multiples of ``patch``; remainder margins are dropped."""
    if patch <= 0:
        raise ConfigError("patch must be positive")
    return [
        PatchRef(i * patch, j * patch, patch, source, split)
        for j in range(full_h // patch)
        for i in range(full_w // patch)
    ]


def plan_inference_patches(full_w: int, full_h: int, patch: int = PATCH, stride: int | None = None,
                           source: str = ""):
    """Overlapping patches covering every pixel; the last row/column is snapped to the border."""
    stride = patch // 2 if stride is None else stride
    if stride <= 0 or stride > patch:
        raise ConfigError(f"stride must be in (0, patch], got {stride}")
    if full_w < patch or full_h < patch:
        raise DataError(f"image {full_w}x{full_h} smaller than one {patch}px patch")

    def starts(dim):
        s = list(range(0, dim - patch + 1, stride))
        if s[-1] != dim - patch:
            s.append(dim - patch)
        return s

    return [PatchRef(x, y, patch, source, "test") for y in starts(full_h) for x in starts(full_w)]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def split_eval(patches, seed=0):
    """Shuffle and halve into (val, test); val gets the extra patch for odd counts."""
    patches = list(patches)
    if len(patches) < 2:
        raise DataError("need at least two patches to split")
    order = _rng(seed).permutation(len(patches))
    half = (len(patches) + 1) // 2
    val = [_with_split(patches[i], "val") for i in order[:half]]
    test = [_with_split(patches[i], "test") for i in order[half:]]
    return val, test


def _with_split(ref: PatchRef, split: str) -> PatchRef:
    return PatchRef(ref.origin_x, ref.origin_y, ref.size, ref.source, split, ref.height)


def sample_train_patches(tile: PatchRef, annotation: np.ndarray, n: int = 10, seed=0, patch: int = PATCH):
    """``n`` uniformly placed patches inside ``tile``; none if the tile holds no annotation."""
    annotation = np.asarray(annotation, dtype=bool)
    H, W = annotation.shape
    ys, xs = tile.slices()
    crop = annotation[max(ys.start, 0):min(ys.stop, H), max(xs.start, 0):min(xs.stop, W)]
    if not crop.any():
        return []
    if patch > min(tile.width, tile.h):
        raise ConfigError(f"patch {patch} larger than tile {tile.width}x{tile.h}")
    rng = _rng(seed)
    ox = rng.integers(tile.origin_x, tile.origin_x + tile.width - patch, size=n, endpoint=True)
    oy = rng.integers(tile.origin_y, tile.origin_y + tile.h - patch, size=n, endpoint=True)
    return [PatchRef(int(x), int(y), patch, tile.source, "train") for x, y in zip(ox, oy)]


def extract(grid: np.ndarray, ref: PatchRef, pad_mode: str = "reflect", layout: PatchLayout | None = None):
    """Copy the patch under ``ref``; pixels outside the image follow ``pad_mode``.

    Without a layout the patch must lie inside the image. With one it may
    reach into the layout's padding margin. ``reflect`` mirrors about the
    border including the edge pixel (row -1 equals row 0).
    """
    grid = np.asarray(grid)
    H, W = grid.shape[:2]
    if layout is not None:
        if (layout.full_w, layout.full_h) != (W, H):
            raise DimensionError(f"layout is for {layout.full_w}x{layout.full_h}, grid is {W}x{H}")
        inside = layout.contains(ref)
    else:
        inside = ref.origin_x >= 0 and ref.origin_y >= 0 and ref.origin_x + ref.width <= W and ref.origin_y + ref.h <= H
    if not inside:
        raise DataError(f"patch {ref.id} lies outside the allowed bounds of a {W}x{H} grid")
    x0, y0 = ref.origin_x, ref.origin_y
    x1, y1 = x0 + ref.width, y0 + ref.h
    left, top = max(0, -x0), max(0, -y0)
    right, bottom = max(0, x1 - W), max(0, y1 - H)
    if left or top or right or bottom:
        widths = [(top, bottom), (left, right)] + [(0, 0)] * (grid.ndim - 2)
        if pad_mode == "reflect":
            padded = np.pad(grid, widths, mode="symmetric")
        elif pad_mode == "zero":
            padded = np.pad(grid, widths, mode="constant")
        else:
            raise ConfigError(f"unknown pad_mode {pad_mode!r}")
        return padded[y0 + top:y1 + top, x0 + left:x1 + left].copy()
    return grid[y0:y1, x0:x1].copy()


def resize_half(grid: np.ndarray, factor: int = 2) -> np.ndarray:
    """Area downsampling by block mean. Masks come back as soft values."""
    a = np.asarray(grid, dtype=np.float64)
    h, w = a.shape[:2]
    if h % factor or w % factor:
        raise DimensionError(f"{w}x{h} not divisible by {factor}")
    a = a.reshape(h // factor, factor, w // factor, factor, *a.shape[2:])
    return a.mean(axis=(1, 3))


def _upsample_axis(a: np.ndarray, axis: int) -> np.ndarray:
    n = a.shape[axis]
    src = np.clip(np.arange(2 * n) / 2.0 - 0.25, 0, n - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = src - i0
    shape = [1] * a.ndim
    shape[axis] = 2 * n
    frac = frac.reshape(shape)
    return np.take(a, i0, axis=axis) * (1 - frac) + np.take(a, i1, axis=axis) * frac


def upsample_double(grid: np.ndarray) -> np.ndarray:
    """Bilinear x2 with half-pixel alignment, clamped to the input range."""
    a = np.asarray(grid, dtype=np.float64)
    out = _upsample_axis(_upsample_axis(a, 0), 1)
    return np.clip(out, a.min(), a.max())


def _rotate_vectors(v: np.ndarray, k: int) -> np.ndarray:
    # np.rot90 turns the image counter-clockwise on screen; with y down
    # that maps (nx, ny) -> (ny, -nx) per quarter turn
    v = v.copy()
    for _ in range(k % 4):
        nx = v[..., 0].copy()
        v[..., 0] = v[..., 1]
        v[..., 1] = -nx
    return v


def _parse_op(op):
    if isinstance(op, str):
        if op in ("flip_h", "flip_v"):
            return (op,)
        if op.startswith("rot90"):
            k = int(op.split(":")[1]) if ":" in op else 1
            return ("rot90", k)
        raise ConfigError(f"unknown augmentation {op!r}")
    return tuple(op)


def op_to_json(op) -> list:
    return list(_parse_op(op))


def augment_standard(patch: np.ndarray, mask: np.ndarray, op):
    """Apply one flip / rotation / shift identically to a patch and its mask.

    ``op`` is ``"flip_h"``, ``"flip_v"``, ``("rot90", k)`` or
    ``("shift", dx, dy)``. Patches of shape (h, w, 3) are treated as normal
    maps and have their x/y components remapped.
    """
    patch = np.asarray(patch, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if patch.shape[:2] != mask.shape[:2]:
        raise DimensionError("patch and mask dims differ")
    is_vector = patch.ndim == 3 and patch.shape[2] == 3
    op = _parse_op(op)
    kind = op[0]
    if kind == "flip_h":
        p, m = patch[:, ::-1].copy(), mask[:, ::-1].copy()
        if is_vector:
            p[..., 0] *= -1
    elif kind == "flip_v":
        p, m = patch[::-1].copy(), mask[::-1].copy()
        if is_vector:
            p[..., 1] *= -1
    elif kind == "rot90":
        k = int(op[1]) % 4
        p, m = np.rot90(patch, k).copy(), np.rot90(mask, k).copy()
        if is_vector:
            p = _rotate_vectors(p, k)
    elif kind == "shift":
        dx, dy = int(op[1]), int(op[2])
        h, w = patch.shape[:2]
        if abs(dx) >= w / 4 or abs(dy) >= h / 4:
            raise ConfigError(f"shift ({dx}, {dy}) must stay below a quarter of the patch")
        p, m = _shift(patch, dx, dy), _shift(mask, dx, dy)
    else:
        raise ConfigError(f"unknown augmentation {kind!r}")
    return p, m


def _shift(a, dx, dy):
    h, w = a.shape[:2]
    r = max(abs(dx), abs(dy))
    widths = [(r, r), (r, r)] + [(0, 0)] * (a.ndim - 2)
    padded = np.pad(a, widths, mode="symmetric")
    return padded[r - dy:r - dy + h, r - dx:r - dx + w].copy()


def cutmix(a, b, rect):
    """Paste ``rect = (x, y, w, h)`` from sample ``b`` into sample ``a``."""
    (pa, ma), (pb, mb) = a, b
    pa, ma = np.array(pa, dtype=np.float64), np.array(ma, dtype=np.float64)
    pb, mb = np.asarray(pb, dtype=np.float64), np.asarray(mb, dtype=np.float64)
    if pa.shape != pb.shape or ma.shape != mb.shape:
        raise DimensionError("cutmix samples differ in shape")
    x, y, w, h = (int(v) for v in rect)
    if w <= 0 or h <= 0:
        raise ConfigError("cutmix rectangle is empty")
    H, W = pa.shape[:2]
    if x < 0 or y < 0 or x + w > W or y + h > H:
        raise ConfigError(f"cutmix rectangle {rect} outside {W}x{H} patch")
    pa[y:y + h, x:x + w] = pb[y:y + h, x:x + w]
    ma[y:y + h, x:x + w] = mb[y:y + h, x:x + w]
    return pa, ma


def mixup(a, b, lam: float):
    """Convex combination ``lam * a + (1 - lam) * b`` of images and soft masks."""
    lo, hi = MIXUP_RANGE
    if not lo <= lam <= hi:
        raise ConfigError(f"mixup lambda {lam} outside [{lo}, {hi}]")
    (pa, ma), (pb, mb) = a, b
    pa, ma = np.asarray(pa, dtype=np.float64), np.asarray(ma, dtype=np.float64)
    pb, mb = np.asarray(pb, dtype=np.float64), np.asarray(mb, dtype=np.float64)
    if pa.shape != pb.shape or ma.shape != mb.shape:
        raise DimensionError("mixup samples differ in shape")
    return lam * pa + (1 - lam) * pb, lam * ma + (1 - lam) * mb


@dataclass(frozen=True)
class MixSpec:
    kind: str
    partner: PatchRef
    lam: float | None = None
    rect: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        if self.kind == "mixup":
            if self.lam is None or not MIXUP_RANGE[0] <= self.lam <= MIXUP_RANGE[1]:
                raise ConfigError(f"mixup lambda {self.lam} outside {MIXUP_RANGE}")
        elif self.kind == "cutmix":
            if self.rect is None:
                raise ConfigError("cutmix needs a rectangle")
        else:
            raise ConfigError(f"unknown mix kind {self.kind!r}")

    def apply(self, a, b):
        if self.kind == "mixup":
            return mixup(a, b, self.lam)
        return cutmix(a, b, self.rect)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "lambda": self.lam,
            "rect": None if self.rect is None else list(self.rect),
            "partner": self.partner.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> MixSpec:
        rect = d.get("rect")
        return cls(d["kind"], PatchRef.from_json(d["partner"]), d.get("lambda"),
                   None if rect is None else tuple(int(v) for v in rect))


def random_mixspec(rng: np.random.Generator, kind: str, size: int, partner: PatchRef) -> MixSpec:
    if kind == "mixup":
        return MixSpec("mixup", partner, lam=float(rng.uniform(*MIXUP_RANGE)))
    # box with area fraction 1 - lam, lam ~ U(0, 1), as in the original CutMix
    lam = rng.uniform()
    side = max(1, int(round(size * math.sqrt(1 - lam))))
    x = int(rng.integers(0, size - side, endpoint=True))
    y = int(rng.integers(0, size - side, endpoint=True))
    return MixSpec("cutmix", partner, rect=(x, y, side, side))


def random_standard_op(rng: np.random.Generator, size: int):
    choice = int(rng.integers(0, 4))
    if choice == 0:
        return ("flip_h",)
    if choice == 1:
        return ("flip_v",)
    if choice == 2:
        return ("rot90", int(rng.integers(1, 4)))
    lim = (size - 1) // 4
    return ("shift", int(rng.integers(-lim, lim, endpoint=True)), int(rng.integers(-lim, lim, endpoint=True)))


@dataclass
class ManifestRecord:
    ref: PatchRef
    files: dict[str, str] = field(default_factory=dict)
    mix: MixSpec | None = None
    augment: tuple | None = None

    def to_json(self) -> dict:
        d = self.ref.to_json()
        d["id"] = self.ref.id
        d["files"] = dict(sorted(self.files.items()))
        if self.mix is not None:
            d["mix"] = self.mix.to_json()
        if self.augment is not None:
            d["augment"] = list(self.augment)
        return d

    @classmethod
    def from_json(cls, d: dict) -> ManifestRecord:
        mix = d.get("mix")
        aug = d.get("augment")
        return cls(PatchRef.from_json(d), dict(d.get("files", {})),
                   None if mix is None else MixSpec.from_json(mix),
                   None if aug is None else tuple(aug))


def write_manifest(records, path) -> None:
    recs = [r if isinstance(r, ManifestRecord) else ManifestRecord(r) for r in records]
    Path(path).write_text(json.dumps([r.to_json() for r in recs], indent=1, sort_keys=True) + "\n")


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest {path} does not exist")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(obj, list):
        raise DataError(f"{path}: manifest must be a JSON list")
    try:
        return [ManifestRecord.from_json(d) for d in obj]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed record ({exc})") from exc
