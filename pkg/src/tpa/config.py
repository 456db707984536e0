"""Run configuration: JSON sections mapped onto dataclasses, unknown keys rejected."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .cvaesm import CVAESMConfig
from .head import ClassifierConfig
from .temporal import ExtractorConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    dataset_path: Optional[str] = None
    prompt_bank_path: Optional[str] = None
    clip_len: int = 16
    allow_sparse: bool = False

    def __post_init__(self):
        if self.clip_len < 1:
            raise ValueError("clip_len must be >= 1")


@dataclass
class TrainerConfig:
    batch: int = 16
    epochs: int = 40
    lr: float = 1e-3
    sched_factor: float = 0.1
    sched_patience: int = 5
    early_patience: int = 10
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if min(self.batch, self.epochs, self.sched_patience, self.early_patience) < 1:
            raise ValueError("batch, epochs and patience values must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.lr <= 0 or not 0 < self.sched_factor < 1:
            raise ValueError("lr must be > 0 and sched_factor in (0, 1)")


@dataclass
class MetricsConfig:
    bins: int = 15
    skip_absent_f1: bool = False

    def __post_init__(self):
        if self.bins < 1:
            raise ValueError("bins must be >= 1")


SECTIONS = {
    "data": DataConfig,
    "extractor": ExtractorConfig,
    "classifier": ClassifierConfig,
    "cvaesm": CVAESMConfig,
    "trainer": TrainerConfig,
    "metrics": MetricsConfig,
}


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    cvaesm: CVAESMConfig = field(default_factory=CVAESMConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "Config":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        parts = {}
        for name, klass in SECTIONS.items():
            section = doc.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            allowed = {f.name for f in dataclasses.fields(klass)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            try:
                parts[name] = klass(**section)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {name!r} section: {exc}") from None
        return cls(**parts)

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            d = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out

    def replace(self, **overrides) -> "Config":
        """Copy with dotted-key overrides, e.g. ``replace(**{"classifier.alpha": 0.0})``."""
        doc = self.to_dict()
        for key, value in overrides.items():
            _set_dotted(doc, key, value)
        return Config.from_dict(doc)


def _set_dotted(doc: dict, key: str, value) -> None:
    try:
        section, name = key.split(".")
    except ValueError:
        raise ConfigError(f"override key must look like section.name, got {key!r}") from None
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section {section!r}")
    doc.setdefault(section, {})[name] = value


def parse_override(text: str):
    """``section.key=value``; the value is parsed as JSON, falling back to a string."""
    if "=" not in text:
        raise ConfigError(f"override must be key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path=None, overrides=()) -> Config:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    for text in overrides:
        key, value = parse_override(text)
        _set_dotted(doc, key, value)
    return Config.from_dict(doc)
