"""Flat ``key=value`` run configuration with dotted namespaces.

Example::

    paths.manifest = data/manifest.csv
    train.objective = bt
    train.learning_rate = 3e-3
    augment.sa_blocks = 1
    encoder.stages = 16:3:2,32:3:2,64:3:2

Blank lines and ``#`` comments are ignored. Unknown keys, duplicate keys and
malformed values are rejected with the offending key in the message.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .audio import FrontendConfig
from .augment import AugmentConfig
from .encoder import EncoderConfig, _parse_bool, _parse_stages
from .fewshot import EvalConfig
from .objectives import ObjectiveConfig
from .train import TrainConfig

REQUIRED_KEYS = ("paths.manifest", "train.objective")

SECTIONS = {
    "frontend": FrontendConfig,
    "augment": AugmentConfig,
    "objective": ObjectiveConfig,
    "encoder": EncoderConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}

# nested or derived fields that are not settable from a config file
_HIDDEN = {("train", "objective_cfg")}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    manifest: Path
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def with_seed(self, seed: int) -> "RunConfig":
        """Override both the training and the evaluation seed."""
        return dataclasses.replace(self, train=dataclasses.replace(self.train, seed=seed),
                                   eval=dataclasses.replace(self.eval, seed=seed))


def known_keys() -> list:
    keys = ["paths.manifest"]
    for section, cls in SECTIONS.items():
        keys += [f"{section}.{f.name}" for f in dataclasses.fields(cls)
                 if (section, f.name) not in _HIDDEN]
    return keys


def _convert(key: str, default, text: str):
    try:
        if key == "encoder.stages":
            return _parse_stages(text)
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.split(",") if v.strip())
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: invalid value {text!r} ({exc})") from None


def parse_pairs(text: str, source: str = "<config>") -> dict:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key}")
        pairs[key] = value.strip()
    return pairs


def build_config(pairs: dict, base_dir: Path = Path(".")) -> RunConfig:
    """Validate every key and value and assemble a :class:`RunConfig`."""
    known = set(known_keys())
    unknown = sorted(k for k in pairs if k not in known)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]}")
    for key in REQUIRED_KEYS:
        if key not in pairs or not pairs[key]:
            raise ConfigError(f"missing required config key {key}")
    sections = {}
    for section, cls in SECTIONS.items():
        defaults = cls()
        kwargs = {}
        for f in dataclasses.fields(cls):
            key = f"{section}.{f.name}"
            if key in pairs:
                kwargs[f.name] = _convert(key, getattr(defaults, f.name), pairs[key])
        if section == "train":
            kwargs["objective_cfg"] = sections["objective"]
        try:
            sections[section] = cls(**kwargs)
        except ValueError as exc:
            named = ", ".join(f"{section}.{k}" for k in kwargs if k != "objective_cfg") or section
            raise ConfigError(f"{named}: {exc}") from None
    manifest = Path(pairs["paths.manifest"])
    if not manifest.is_absolute():
        manifest = base_dir / manifest
    return RunConfig(manifest=manifest, **sections)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return build_config(parse_pairs(text, str(path)), path.parent)


def format_config(cfg: RunConfig) -> str:
    """Inverse of :func:`load_config` for every settable key."""
    lines = [f"paths.manifest={cfg.manifest}"]
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            if (section, f.name) in _HIDDEN:
                continue
            value = getattr(obj, f.name)
            if section == "encoder" and f.name == "stages":
                value = ",".join(f"{s.out_channels}:{s.kernel}:{s.stride}" for s in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            elif isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{section}.{f.name}={value}")
    return "\n".join(lines) + "\n"
