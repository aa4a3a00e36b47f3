"""Raster types, the ETGR float container and the on-disk dataset layout.

ETGR layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"ETGR"
    4       4     u32 version (= 1)
    8       4     u32 width
    12      4     u32 height
    16      4     u32 channels (1 or 3)
    20      ...   width*height*channels float32, row-major, channel-interleaved

Masks are plain ``bool`` arrays of shape (height, width); scalar and vector
rasters are wrapped so they can carry resolution / validity metadata.

Dataset layout::

    <root>/<id>/captures/*.png
    <root>/<id>/lights.json
    <root>/<id>/derived/{albedo,normal,depth,prob}.etgr
    <root>/<id>/masks/{object,annotation_a,annotation_b}.png
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CapacityError, DataError, DimensionError, FormatError

MAGIC = b"ETGR"
VERSION = 1
HEADER = struct.Struct("<4sIIII")
# 2**31 float32 samples = 8 GiB; anything larger is treated as a corrupt header
MAX_SAMPLES = 2**31
SENTINEL_NORMAL = (0.0, 0.0, 1.0)
LIGHT_NORM_TOL = 1e-6
IMAGE_EXTENSIONS = (".png", ".pgm", ".tif", ".tiff")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ScalarGrid:
    """2-D raster of finite scalars, row-major as ``data[y, x]``."""

    data: np.ndarray
    resolution: float | None = None  # pixels per mm

    def __post_init__(self):
        a = np.array(self.data, dtype=np.float64)
        if a.ndim != 2:
            raise DimensionError(f"ScalarGrid needs a 2-D array, got shape {a.shape}")
        if a.size == 0:
            raise DimensionError("ScalarGrid must not be empty")
        if not np.isfinite(a).all():
            raise DataError("ScalarGrid samples must be finite")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class VectorGrid:
    """Raster of 3-vectors ``data[y, x, :]`` with a per-pixel validity flag.

    Invalid pixels always hold the sentinel (0, 0, 1).
    """

    data: np.ndarray
    validity: np.ndarray | None = None
    resolution: float | None = None

    def __post_init__(self):
        a = np.array(self.data, dtype=np.float64)
        if a.ndim != 3 or a.shape[2] != 3:
            raise DimensionError(f"VectorGrid needs shape (h, w, 3), got {a.shape}")
        if a.shape[0] == 0 or a.shape[1] == 0:
            raise DimensionError("VectorGrid must not be empty")
        if self.validity is None:
            valid = np.ones(a.shape[:2], dtype=bool)
        else:
            valid = np.array(self.validity, dtype=bool)
            if valid.shape != a.shape[:2]:
                raise DimensionError("validity shape does not match vector raster")
        valid &= np.isfinite(a).all(axis=2)
        a[~valid] = SENTINEL_NORMAL
        object.__setattr__(self, "data", _frozen(a))
        object.__setattr__(self, "validity", _frozen(valid))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]


def write_grid(grid: ScalarGrid | VectorGrid | np.ndarray, path) -> None:
    """Write a grid as ETGR. Plain arrays of shape (h, w) or (h, w, 3) are accepted."""
    path = Path(path)
    data = grid.data if isinstance(grid, (ScalarGrid, VectorGrid)) else np.asarray(grid)
    if data.ndim == 2:
        channels = 1
    elif data.ndim == 3 and data.shape[2] == 3:
        channels = 3
    else:
        raise DimensionError(f"cannot store array of shape {data.shape} as ETGR")
    height, width = data.shape[:2]
    if width == 0 or height == 0:
        raise DimensionError(f"refusing to write empty {width}x{height} grid to {path}")
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, VERSION, width, height, channels))
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"failed to write grid to {path}: {exc}") from exc


def read_grid_header(path) -> tuple[int, int, int]:
    """Return (width, height, channels) from an ETGR header."""
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
    return _parse_header(head, path)


def _parse_header(head: bytes, path) -> tuple[int, int, int]:
    if len(head) < HEADER.size:
        raise FormatError(f"{path}: file too short for an ETGR header")
    magic, version, width, height, channels = HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported ETGR version {version}")
    if channels not in (1, 3):
        raise FormatError(f"{path}: channels must be 1 or 3, got {channels}")
    if width == 0 or height == 0:
        raise FormatError(f"{path}: empty {width}x{height} grid")
    if width * height * channels > MAX_SAMPLES:
        raise CapacityError(f"{path}: {width}x{height}x{channels} exceeds sample limit")
    return width, height, channels


def read_grid(path) -> ScalarGrid | VectorGrid:
    """Read an ETGR file, or an 8/16-bit grayscale image scaled to [0, 1]."""
    path = Path(path)
    if path.suffix.lower() in IMAGE_EXTENSIONS:
        return ScalarGrid(read_image(path))
    blob = path.read_bytes()
    width, height, channels = _parse_header(blob[: HEADER.size], path)
    expected = width * height * channels * 4
    payload = blob[HEADER.size :]
    if len(payload) != expected:
        raise CapacityError(
            f"{path}: header claims {width}x{height}x{channels} "
            f"({expected} bytes) but payload has {len(payload)} bytes"
        )
    a = np.frombuffer(payload, dtype="<f4")
    if channels == 1:
        return ScalarGrid(a.reshape(height, width))
    return VectorGrid(a.reshape(height, width, 3))


def read_image(path) -> np.ndarray:
    """Grayscale image as float64 in [0, 1], dividing by the max representable value."""
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except OSError as exc:
        raise FormatError(f"{path}: cannot decode image ({exc})") from exc
    mode = img.mode
    if mode in ("I;16", "I;16B", "I;16L", "I;16N"):
        return np.asarray(img, dtype=np.float64) / 65535.0
    if mode == "I":
        # Pillow promotes 16-bit PNG/PGM to 32-bit ints on some paths
        return np.asarray(img, dtype=np.float64) / 65535.0
    if mode == "1":
        return np.asarray(img, dtype=np.float64)
    if mode != "L":
        img = img.convert("L")
    return np.asarray(img, dtype=np.float64) / 255.0


def read_mask(path) -> np.ndarray:
    """Binary mask, binarized at half of full scale."""
    return read_image(path) >= 0.5


def write_image(values: np.ndarray, path, bits: int = 16) -> None:
    """Write a [0, 1] grayscale array as an 8- or 16-bit PNG."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    if bits == 16:
        img = Image.fromarray(np.round(v * 65535).astype(np.uint16))
    elif bits == 8:
        img = Image.fromarray(np.round(v * 255).astype(np.uint8))
    else:
        raise ValueError("bits must be 8 or 16")
    img.save(Path(path))


def write_mask(mask: np.ndarray, path) -> None:
    write_image(np.asarray(mask, dtype=bool).astype(np.float64), path, bits=8)


def _raster_shape(path: Path) -> tuple[int, int]:
    if path.suffix.lower() == ".etgr":
        w, h, _ = read_grid_header(path)
        return h, w
    try:
        with Image.open(path) as img:
            w, h = img.size
    except OSError as exc:
        raise FormatError(f"{path}: cannot decode image ({exc})") from exc
    return h, w


@dataclass(frozen=True)
class MirrorRecord:
    id: str
    captures: tuple[Path, ...]
    lights: np.ndarray  # (N, 3) unit vectors
    intensities: np.ndarray  # (N,)
    derived: dict[str, Path] = field(default_factory=dict)
    root: Path | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return _raster_shape(self.captures[0])


def parse_lights(obj: dict, source="lights.json") -> tuple[np.ndarray, np.ndarray]:
    try:
        entries = obj["lights"]
        dirs = np.array([e["dir"] for e in entries], dtype=np.float64)
        intens = np.array([e.get("intensity", 1.0) for e in entries], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{source}: malformed lights entry ({exc})") from exc
    if dirs.ndim != 2 or dirs.shape[1] != 3:
        raise FormatError(f"{source}: every light needs a 3-vector 'dir'")
    if len(dirs) < 3:
        raise DataError(f"{source}: need at least 3 lights, found {len(dirs)}")
    norms = np.linalg.norm(dirs, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > LIGHT_NORM_TOL)
    if bad.size:
        raise DataError(f"{source}: light {bad[0]} has norm {norms[bad[0]]:.9f}, expected 1")
    if np.any(intens <= 0):
        raise DataError(f"{source}: light intensities must be positive")
    return dirs, intens


def lights_to_json(lights: np.ndarray, intensities=None) -> dict:
    lights = np.asarray(lights, dtype=float)
    if intensities is None:
        intensities = np.ones(len(lights))
    return {
        "lights": [
            {"dir": [float(c) for c in d], "intensity": float(i)}
            for d, i in zip(lights, intensities)
        ]
    }


def load_mirror(root, mirror_id: str) -> MirrorRecord:
    """Load and eagerly validate one mirror directory."""
    base = Path(root) / mirror_id
    if not base.is_dir():
        raise DataError(f"mirror directory {base} does not exist")
    lights_path = base / "lights.json"
    if not lights_path.is_file():
        raise DataError(f"{lights_path} is missing")
    try:
        obj = json.loads(lights_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{lights_path}: invalid JSON ({exc})") from exc
    lights, intens = parse_lights(obj, lights_path)

    cap_dir = base / "captures"
    captures = tuple(
        sorted(p for p in cap_dir.glob("*") if p.suffix.lower() in IMAGE_EXTENSIONS)
    ) if cap_dir.is_dir() else ()
    if len(captures) != len(lights):
        raise DataError(
            f"{base}: {len(captures)} captures but {len(lights)} lights in {lights_path}"
        )

    derived = {}
    for sub, names in (
        ("derived", ("albedo", "normal", "depth", "depth_hp", "prob", "validity")),
        ("masks", ("object", "annotation_a", "annotation_b")),
    ):
        for name in names:
            for ext in (".etgr", ".png", ".pgm"):
                p = base / sub / (name + ext)
                if p.is_file():
                    derived[name] = p
                    break

    shape = _raster_shape(captures[0])
    for p in list(captures[1:]) + list(derived.values()):
        s = _raster_shape(p)
        if s != shape:
            raise DimensionError(f"{p}: size {s[1]}x{s[0]} differs from {shape[1]}x{shape[0]}")
    return MirrorRecord(mirror_id, captures, lights, intens, derived, Path(root))
