"""Flat ``key = value`` configuration files.

Keys are ``<section>.<field>``, for example ``train.epochs = 120`` or
``encoder.use_unet = false``. Sections: ``gen``, ``noise``, ``train``,
``loss``, ``encoder``, ``lattice``, ``mode`` (category -> ``tag``/``cp``) and
``max_len`` (category -> int). ``#`` starts a comment.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .encoder import EncoderConfig
from .inference import ModeConfig
from .lattice import LatticeParams
from .synth import GenConfig, NoiseConfig
from .trainer import LossWeights, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class Settings:
    gen: GenConfig = field(default_factory=GenConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lattice: LatticeParams = field(default_factory=LatticeParams)
    modes: dict[str, str] = field(default_factory=dict)
    max_len: dict[str, int] = field(default_factory=dict)

    def mode_config(self, categories, default_mode: str = "tag") -> ModeConfig:
        modes = {c: self.modes.get(c, default_mode) for c in categories}
        return ModeConfig(modes, dict(self.max_len), self.train.max_len)


_SECTIONS = {"gen": GenConfig, "noise": NoiseConfig, "train": TrainConfig, "loss": LossWeights,
             "encoder": EncoderConfig, "lattice": LatticeParams}


def _coerce(raw: str, default: Any, key: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], str):
                return tuple(items)
            return tuple(int(s) for s in items)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(default).__name__}") from None


def parse_settings(text: str, source: str = "<config>") -> Settings:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str  # keep category names case-sensitive
    try:
        parser.read_string("[top]\n" + text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None

    values: dict[str, dict[str, str]] = {s: {} for s in (*_SECTIONS, "mode", "max_len")}
    for key, raw in parser["top"].items():
        section, _, name = key.partition(".")
        if section not in values or not name:
            raise ConfigError(f"{source}: unknown key {key!r}")
        values[section][name] = raw

    built = {}
    for section, cls in _SECTIONS.items():
        defaults = {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}
        kwargs = {}
        for name, raw in values[section].items():
            if name not in defaults or dataclasses.is_dataclass(defaults[name]):
                raise ConfigError(f"{source}: unknown key {section}.{name!r}; known: {sorted(defaults)}")
            kwargs[name] = _coerce(raw, defaults[name], f"{section}.{name}")
        try:
            built[section] = cls(**kwargs)
        except ValueError as e:
            raise ConfigError(f"{source}: [{section}] {e}") from None
    train = dataclasses.replace(built["train"], weights=built["loss"])
    max_len = {c: _coerce(v, 0, f"max_len.{c}") for c, v in values["max_len"].items()}
    return Settings(built["gen"], built["noise"], train, built["encoder"], built["lattice"],
                    dict(values["mode"]), max_len)


def load_settings(path: str | Path | None) -> Settings:
    if path is None:
        return Settings()
    path = Path(path)
    return parse_settings(path.read_text(), str(path))
