"""Pipeline configuration: file loading, flag overrides and provenance hash."""
from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .annot import StageLabel
from .dataset import DEFAULT_RATIOS, DEFAULT_SIZE
from .detect import DEFAULT_THRESHOLD, BackendConfig, BackendKind
from .enhance import ClaheParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CONFIG_ENV = "ROPSTAGE_CONFIG"
_NON_RESULT_KEYS = {"images_dir", "via_json", "manifest", "output_dir", "workers"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    clahe: ClaheParams = field(default_factory=ClaheParams)
    ratios: tuple[int, int, int] = DEFAULT_RATIOS
    augment_factor: int = 5
    augment_stage: int = 1
    backend: BackendConfig = field(default_factory=BackendConfig)
    output_size: int = DEFAULT_SIZE
    stage_key: str = "stage"
    iou_threshold: float = 0.5
    ap_method: str = "envelope"
    workers: int = 1
    images_dir: str | None = None
    via_json: str | None = None
    manifest: str | None = None
    output_dir: str = "out"

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ConfigError(f"ratios must be three positive numbers, got {self.ratios}")
        if self.augment_factor < 1:
            raise ConfigError("augment_factor must be >= 1")
        if self.augment_stage not in (1, 2, 3):
            raise ConfigError("augment_stage must be 1, 2 or 3")
        if self.output_size < 1 or self.workers < 1:
            raise ConfigError("output_size and workers must be positive")
        if self.ap_method not in ("envelope", "trapezoid"):
            raise ConfigError(f"unknown ap_method {self.ap_method!r}")

    @property
    def target_stage(self) -> StageLabel:
        return StageLabel.from_number(self.augment_stage)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratios"] = list(self.ratios)
        d["backend"]["kind"] = self.backend.kind.value
        return d

    def hash(self) -> str:
        """Digest of every setting that affects results; locations and worker count excluded."""
        d = {k: v for k, v in self.to_dict().items() if k not in _NON_RESULT_KEYS}
        d["backend"] = {k: v for k, v in d["backend"].items() if k != "file_dir"}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        try:
            if "clahe" in d:
                d["clahe"] = ClaheParams(**d["clahe"])
            if "backend" in d:
                d["backend"] = BackendConfig(**d["backend"])
            if "ratios" in d:
                d["ratios"] = tuple(d["ratios"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> PipelineConfig:
    """Read TOML or JSON; ``None`` falls back to ``$ROPSTAGE_CONFIG`` then defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return PipelineConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return PipelineConfig.from_dict(data)


def with_overrides(cfg: PipelineConfig, **flags) -> PipelineConfig:
    """Apply non-None command-line values on top of ``cfg``."""
    top, clahe, backend = {}, {}, {}
    for key, value in flags.items():
        if value is None:
            continue
        if key in ("tiles_x", "tiles_y", "clip_limit"):
            clahe[key] = value
        elif key in ("backend", "confidence_threshold", "file_dir"):
            backend["kind" if key == "backend" else key] = value
        else:
            top[key] = value
    try:
        if clahe:
            top["clahe"] = replace(cfg.clahe, **clahe)
        if backend:
            b = {"kind": cfg.backend.kind, "confidence_threshold": cfg.backend.confidence_threshold,
                 "file_dir": cfg.backend.file_dir, **backend}
            top["backend"] = BackendConfig(BackendKind(b["kind"]), b["confidence_threshold"], b["file_dir"])
        if "ratios" in top:
            top["ratios"] = tuple(top["ratios"])
        return replace(cfg, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


__all__ = ["PipelineConfig", "ConfigError", "load_config", "with_overrides", "DEFAULT_THRESHOLD"]
