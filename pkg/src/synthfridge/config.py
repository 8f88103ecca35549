"""GenerationConfig: the single declarative source for every pipeline command.

Loaded from YAML (JSON is valid YAML). Keys mirror the dataclass fields;
nested sections ``scene``, ``scene.fridge``, ``annotate`` and ``decode``
map onto their own dataclasses. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .annotate import AnnotateConfig
from .composer import FridgeSpec, SceneConfig
from .detector_math import DEFAULT_STRIDE, DecodeConfig

CONFIG_DIR_ENV = "SYNTHFRIDGE_CONFIG_DIR"
DEFAULT_CONFIG_NAME = "synthfridge.yaml"
SWEEP_AXES = ("dataset_size", "dictionary_size")
# keys that do not change what an individual image looks like
_NON_CONTENT_KEYS = ("dataset_size", "output_dir", "workers", "sweep", "gt_dir", "det_dir")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    axis: str = "dataset_size"
    values: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {self.axis!r}")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigError(f"sweep values must be strictly ascending, got {list(self.values)}")
        if any(v < 1 for v in self.values):
            raise ConfigError("sweep values must be >= 1")


@dataclass(frozen=True)
class GenerationConfig:
    dataset_size: int = 10
    dictionary_size: Optional[int] = None  # None: the whole repository
    repository_size: int = 400
    repository_dir: Optional[str] = None  # directory of .obj files instead of procedural models
    seed: int = 0
    output_dir: str = "dataset"
    workers: int = 1
    stride: int = DEFAULT_STRIDE
    iou_thresh: float = 0.5
    gt_dir: Optional[str] = None
    det_dir: Optional[str] = None
    scene: SceneConfig = field(default_factory=SceneConfig)
    annotate: AnnotateConfig = field(default_factory=AnnotateConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def __post_init__(self):
        if self.dataset_size < 1:
            raise ConfigError("dataset_size must be >= 1")
        if self.repository_size < 1:
            raise ConfigError("repository_size must be >= 1")
        if self.dictionary_size is not None and not 1 <= self.dictionary_size:
            raise ConfigError("dictionary_size must be >= 1")
        if self.repository_dir is None and self.dictionary_size is not None \
                and self.dictionary_size > self.repository_size:
            raise ConfigError(f"dictionary_size {self.dictionary_size} exceeds repository_size {self.repository_size}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.stride < 1 or self.scene.image_size % self.stride:
            raise ConfigError(f"stride {self.stride} must divide image size {self.scene.image_size}")
        if not 0 < self.iou_thresh < 1:
            raise ConfigError("iou_thresh must lie in (0, 1)")

    def replace(self, **kw) -> GenerationConfig:
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def content_hash(self) -> str:
        """Hash of the settings that determine image content (size, paths and workers excluded)."""
        d = self.to_dict()
        for k in _NON_CONTENT_KEYS:
            d.pop(k, None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys in {where or 'top level'}: {unknown}")
    kw = {}
    for k, v in data.items():
        sub = _NESTED.get((cls, k))
        if sub is not None:
            kw[k] = _build(sub, v, f"{where}.{k}".lstrip("."))
        elif isinstance(v, list):
            kw[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        else:
            kw[k] = v
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where or 'config'}: {e}") from None


_NESTED = {
    (GenerationConfig, "scene"): SceneConfig,
    (GenerationConfig, "annotate"): AnnotateConfig,
    (GenerationConfig, "decode"): DecodeConfig,
    (GenerationConfig, "sweep"): SweepConfig,
    (SceneConfig, "fridge"): FridgeSpec,
}


def config_from_dict(data: dict | None) -> GenerationConfig:
    return _build(GenerationConfig, data or {}, "")


def load_config(path: str | os.PathLike | None = None) -> GenerationConfig:
    """Read a config file; without a path, fall back to ``$SYNTHFRIDGE_CONFIG_DIR/synthfridge.yaml`` or defaults."""
    if path is None:
        env = os.environ.get(CONFIG_DIR_ENV)
        if not env:
            return GenerationConfig()
        path = Path(env) / DEFAULT_CONFIG_NAME
        if not path.exists():
            return GenerationConfig()
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}") from None
    return config_from_dict(data)
