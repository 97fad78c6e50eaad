"""Run configuration: nested dataclasses loaded from YAML/JSON with flag overrides.

Precedence is flags > config file > built-in defaults. Unknown keys are
rejected at every level.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml

from .errors import ConfigError

WEIGHTS_DIR_ENV = "TFCOUNT_WEIGHTS_DIR"


@dataclass(frozen=True)
class SuperpixelConfig:
    n_segments: int = 1024
    compactness: float = 10.0
    max_iterations: int = 10


@dataclass(frozen=True)
class SegmenterConfig:
    backend: str = "sam"
    variant: str = "vit_h"
    weights_path: Optional[str] = None
    device: str = "cpu"
    points_per_batch: int = 64
    # mock only: point prompts on components smaller than this decode empty
    min_point_area: int = 30


@dataclass(frozen=True)
class SemanticConfig:
    backend: str = "hf"
    model: str = "dinov2"
    weights_path: Optional[str] = None
    device: str = "cpu"


@dataclass(frozen=True)
class PromptConfig:
    mode: str = "superpixel"
    grid_side: int = 32


@dataclass(frozen=True)
class MultiscaleConfig:
    enabled: bool = True
    n_p: int = 2
    drop_truncated: bool = True


@dataclass(frozen=True)
class DedupConfig:
    iou_threshold: float = 0.8


@dataclass(frozen=True)
class MatchingConfig:
    theta: float = 0.4
    delta: float = 0.5
    tpu_rounds: int = 1
    mask_interp: str = "soft"


@dataclass(frozen=True)
class RunConfig:
    superpixel: SuperpixelConfig = field(default_factory=SuperpixelConfig)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    semantic: SemanticConfig = field(default_factory=SemanticConfig)
    prompts: PromptConfig = field(default_factory=PromptConfig)
    multiscale: MultiscaleConfig = field(default_factory=MultiscaleConfig)
    dedup: DedupConfig = field(default_factory=DedupConfig)
    matching: MatchingConfig = field(default_factory=MatchingConfig)
    ref_format: str = "box"
    seed: int = 0
    workers: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def get(self, key: str) -> Any:
        obj = self
        for part in key.split("."):
            obj = getattr(obj, part)
        return obj

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Return a copy with dotted-key overrides, e.g. ``{"matching.theta": 0.3}``."""
        return apply_overrides(self, overrides)

    def validate(self) -> "RunConfig":
        for key, allowed in CHOICES.items():
            value = self.get(key)
            if value not in allowed:
                raise ConfigError(f"{key}={value!r} not in {sorted(allowed)}")
        m = self.matching
        for name in ("theta", "delta"):
            value = getattr(m, name)
            if not -1.0 < value <= 1.0:
                raise ConfigError(f"matching.{name}={value} outside (-1, 1]")
        if m.tpu_rounds < 0:
            raise ConfigError("matching.tpu_rounds must be >= 0")
        if self.multiscale.n_p < 1:
            raise ConfigError("multiscale.n_p must be >= 1")
        if not 0.0 < self.dedup.iou_threshold <= 1.0:
            raise ConfigError("dedup.iou_threshold must be in (0, 1]")
        if self.prompts.grid_side < 1 or self.superpixel.n_segments < 1:
            raise ConfigError("prompt counts must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self


CHOICES = {
    "segmenter.backend": {"sam", "mock"},
    "segmenter.variant": {"vit_b", "vit_h"},
    "semantic.backend": {"hf", "mock"},
    "semantic.model": {"clip", "dino", "dinov2", "mock", "segmenter"},
    "prompts.mode": {"superpixel", "grid"},
    "matching.mask_interp": {"soft", "hard"},
    "ref_format": {"box", "point"},
}


def _coerce(value: Any, target_type: Any, key: str) -> Any:
    if isinstance(target_type, str):
        target_type = {"int": int, "float": float, "bool": bool, "str": str,
                       "Optional[str]": Optional[str]}.get(target_type, target_type)
    if target_type is Optional[str]:
        return None if value is None else str(value)
    if target_type is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if target_type is int:
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if target_type is float:
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if target_type is str:
        return str(value)
    return value


def _build(cls, data: Mapping[str, Any], prefix: str = ""):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in sorted(unknown))}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value or {}, prefix + name + ".")
        else:
            kwargs[name] = _coerce(value, f.type, prefix + name)
    return cls(**kwargs)


def config_from_dict(data: Optional[Mapping[str, Any]] = None) -> RunConfig:
    return _build(RunConfig, data or {}).validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    return config_from_dict(data or {})


def flat_keys(cfg: Optional[RunConfig] = None) -> Dict[str, Any]:
    """All dotted leaf keys with their current values."""
    cfg = cfg or RunConfig()
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for g in dataclasses.fields(value):
                out[f"{f.name}.{g.name}"] = getattr(value, g.name)
        else:
            out[f.name] = value
    return out


def apply_overrides(cfg: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    data = cfg.to_dict()
    known = flat_keys(cfg)
    for key, value in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {key}")
        if "." in key:
            section, name = key.split(".", 1)
            data[section][name] = value
        else:
            data[key] = value
    return config_from_dict(data)


def resolve_weights(path: Optional[str]) -> Optional[str]:
    """Resolve a relative weights path against ``$TFCOUNT_WEIGHTS_DIR``."""
    if path is None:
        return None
    base = os.environ.get(WEIGHTS_DIR_ENV)
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def mock_config(**overrides: Any) -> RunConfig:
    """Defaults with both backends switched to the deterministic mocks."""
    merged = {"segmenter.backend": "mock", "semantic.backend": "mock"}
    merged.update(overrides)
    return apply_overrides(RunConfig(), merged)
