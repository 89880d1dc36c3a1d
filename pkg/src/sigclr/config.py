"""Run configuration and the flat ``section.key = value`` config format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple

from .data import AugmentationConfig
from .losses import LossParams
from .optim import OptimizerConfig
from .probe import ProbeConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    encoder_widths: Tuple[int, ...] = (256, 128)
    projector_widths: Tuple[int, ...] = (1024, 1024, 128)
    width_factor: float = 0.125
    precision: str = "float32"

    def __post_init__(self):
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")


@dataclass
class SyntheticConfig:
    classes: int = 4
    train_per_class: int = 128
    test_per_class: int = 64
    image_size: int = 8
    separation: float = 8.0
    noise: float = 0.05
    seed: int = 1234


def desk_augmentation() -> AugmentationConfig:
    """Milder defaults suited to the 8x8 synthetic images."""
    return AugmentationConfig(crop_scale_range=(0.6, 1.0), brightness=0.2, contrast=0.2,
                              saturation=0.2, hue=0.05, blur_sigma_range=(0.1, 1.0))


@dataclass
class RunConfig:
    loss: str = "sigclr"
    loss_params: LossParams = field(default_factory=LossParams)
    learnable_bias: bool = True
    ntxent_temperature: float = 0.5
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)
    augment: AugmentationConfig = field(default_factory=desk_augmentation)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: str = "synthetic"
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    devices: int = 1
    epochs: int = 30
    seed: int = 0
    out: str = "runs/default"
    workers: int = 1

    def validate(self) -> "RunConfig":
        if self.loss not in ("sigclr", "ntxent"):
            raise ConfigError(f"loss must be sigclr or ntxent, got {self.loss!r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.devices < 1:
            raise ConfigError("devices must be >= 1")
        if not self.ntxent_temperature > 0:
            raise ConfigError("ntxent_temperature must be positive")
        if (2 * self.optim.batch_size) % self.devices:
            raise ConfigError(f"{self.devices} devices do not divide {2 * self.optim.batch_size} rows")
        if self.data != "synthetic":
            kind, _, path = self.data.partition(":")
            if kind != "cifar10" or not path:
                raise ConfigError(f"data must be 'synthetic' or 'cifar10:PATH', got {self.data!r}")
            if not Path(path).exists():
                raise ConfigError(f"dataset path {path} does not exist")
        return self


SECTIONS = {
    "loss": "loss_params",
    "optim": "optim",
    "augment": "augment",
    "model": "model",
    "synthetic": "synthetic",
    "probe": "probe",
}


def _coerce(raw: str, current, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(current[0]) if current else str
            return tuple(kind(s) for s in items)
        if current is None:
            if raw.lower() == "none":
                return None
            return int(raw) if raw.isdigit() else float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def apply_overrides(config: RunConfig, pairs) -> RunConfig:
    """Apply ``(dotted_key, raw_string)`` pairs, returning a new config."""
    subs = {name: getattr(config, attr) for name, attr in SECTIONS.items()}
    top = {}
    for key, raw in pairs:
        section, dot, name = key.partition(".")
        if dot:
            if section not in subs:
                raise ConfigError(f"unknown config section {section!r} in {key!r}")
            obj = subs[section]
            if name not in {f.name for f in dataclasses.fields(obj)}:
                raise ConfigError(f"unknown key {key!r}")
            try:
                subs[section] = dataclasses.replace(obj, **{name: _coerce(raw, getattr(obj, name), key)})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        else:
            if key in SECTIONS.values() or key not in {f.name for f in dataclasses.fields(config)}:
                raise ConfigError(f"unknown key {key!r}")
            top[key] = _coerce(raw, getattr(config, key), key)
    updates = {SECTIONS[name]: obj for name, obj in subs.items()}
    updates.update(top)
    return dataclasses.replace(config, **updates)


def parse_config_text(text: str):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq or not key.strip():
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path=None, overrides=()) -> RunConfig:
    config = RunConfig()
    pairs = []
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        pairs.extend(parse_config_text(text))
    pairs.extend(overrides)
    return apply_overrides(config, pairs).validate()


def dump_config(config: RunConfig) -> str:
    """Inverse of :func:`parse_config_text` for every scalar/tuple field."""
    def fmt(v):
        if isinstance(v, tuple):
            return ", ".join(str(x) for x in v)
        if isinstance(v, bool):
            return "true" if v else "false"
        return str(v)

    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if dataclasses.is_dataclass(v):
            section = next(k for k, attr in SECTIONS.items() if attr == f.name)
            for sf in dataclasses.fields(v):
                lines.append(f"{section}.{sf.name} = {fmt(getattr(v, sf.name))}")
        else:
            lines.append(f"{f.name} = {fmt(v)}")
    return "\n".join(lines) + "\n"
