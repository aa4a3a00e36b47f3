"""Pipeline configuration: one JSON file, per-stage sections, flags override."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .predictors import PredictorConfig
from .preprocess import PreprocessConfig
from .stitcher import EPS_W, SWEEP_THRESHOLDS

INPUT_CHOICES = ("depth_hp", "depth", "albedo")


@dataclass(frozen=True)
class PatchworkConfig:
    # None: standard tiles when the mirror is large enough, "auto" otherwise
    tile_w: int | str | None = None
    tile_h: int | str | None = None
    patch: int = 512
    infer_stride: int = 256
    train_per_tile: int = 10
    pad_mode: str = "reflect"
    # predictors see half-resolution copies, outputs are upsampled back
    resize: bool = True
    mix: tuple[str, ...] = ("cutmix", "mixup")

    def __post_init__(self):
        for name in ("tile_w", "tile_h"):
            v = getattr(self, name)
            if not (v is None or v == "auto" or (isinstance(v, int) and not isinstance(v, bool) and v > 0)):
                raise ConfigError(f"{name} must be a positive int, 'auto' or null, got {v!r}")
        if self.patch < 4 or self.patch % 2:
            raise ConfigError(f"patch must be even and >= 4, got {self.patch}")
        if not 0 < self.infer_stride <= self.patch:
            raise ConfigError(f"infer_stride must be in (0, patch], got {self.infer_stride}")
        if self.train_per_tile < 0:
            raise ConfigError("train_per_tile must be >= 0")
        if self.pad_mode not in ("reflect", "zero"):
            raise ConfigError(f"unknown pad_mode {self.pad_mode!r}")
        mix = tuple(self.mix)
        for k in mix:
            if k not in ("cutmix", "mixup"):
                raise ConfigError(f"unknown mix kind {k!r}")
        object.__setattr__(self, "mix", mix)


@dataclass(frozen=True)
class StitcherConfig:
    threshold: float = 0.5
    weight_eps: float = EPS_W
    sweep: tuple[float, ...] = SWEEP_THRESHOLDS

    def __post_init__(self):
        if not 0 <= self.threshold <= 1:
            raise ConfigError(f"threshold must be in [0, 1], got {self.threshold}")
        if not 0 < self.weight_eps < 1:
            raise ConfigError("weight_eps must be in (0, 1)")
        object.__setattr__(self, "sweep", tuple(float(t) for t in self.sweep))


@dataclass(frozen=True)
class MetricsConfig:
    mode: str = "micro"
    annotation: str = "annotation_a"
    eval_patch: int = 512

    def __post_init__(self):
        if self.mode not in ("micro", "macro"):
            raise ConfigError(f"unknown aggregation mode {self.mode!r}")
        if self.eval_patch <= 0:
            raise ConfigError("eval_patch must be positive")


@dataclass(frozen=True)
class SynthConfig:
    width: int = 1024
    height: int = 1024
    n_strokes: int = 14
    n_cracks: int = 12
    n_pits: int = 600
    noise_sigma: float = 0.02
    relief_amplitude: float = 0.45
    capture_noise: float = 0.0

    def __post_init__(self):
        if self.width < 64 or self.height < 64:
            raise ConfigError("synthetic mirrors must be at least 64x64")
        if min(self.n_strokes, self.n_cracks, self.n_pits) < 0:
            raise ConfigError("stroke, crack and pit counts must be >= 0")
        if self.noise_sigma < 0 or self.capture_noise < 0 or self.relief_amplitude < 0:
            raise ConfigError("noise and relief amplitudes must be >= 0")


@dataclass(frozen=True)
class PipelineConfig:
    root: str = "data"
    out: str | None = None
    id: str = "synth_000"
    seed: int = 0
    # which derived grid the predictors read
    input: str = "depth_hp"
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    patchwork: PatchworkConfig = field(default_factory=PatchworkConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    stitcher: StitcherConfig = field(default_factory=StitcherConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.input not in INPUT_CHOICES:
            raise ConfigError(f"input must be one of {INPUT_CHOICES}, got {self.input!r}")
        if not self.id or "/" in self.id:
            raise ConfigError(f"invalid mirror id {self.id!r}")

    @property
    def out_dir(self) -> Path:
        return Path(self.root if self.out is None else self.out) / self.id

    @property
    def mirror_dir(self) -> Path:
        return Path(self.root) / self.id

    def to_json(self) -> dict:
        return _to_plain(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, d: dict, source: str = "config") -> PipelineConfig:
        return _build(cls, d, source)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in d.items():
        sub = _NESTED.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{where}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_NESTED = {
    (PipelineConfig, "preprocess"): PreprocessConfig,
    (PipelineConfig, "patchwork"): PatchworkConfig,
    (PipelineConfig, "predictor"): PredictorConfig,
    (PipelineConfig, "stitcher"): StitcherConfig,
    (PipelineConfig, "metrics"): MetricsConfig,
    (PipelineConfig, "synth"): SynthConfig,
}


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Read a JSON config (or defaults) and apply dotted-key overrides.

    ``overrides`` maps keys like ``"seed"`` or ``"predictor.method"`` to
    values; ``None`` values are ignored so unset flags never win.
    """
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return PipelineConfig.from_json(data, str(path) if path is not None else "config")
