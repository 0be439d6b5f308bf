"""INI experiment configuration.

One file with [model], [train], [data], and [decode] sections; every key has
a default, so the empty file (or no file) is a complete configuration.
Unknown sections or keys are rejected to catch typos. Values "none"/"off"
turn optional numeric knobs (clip_norm, adaptive margins) off.

Example:

    [model]
    vocab_size = 16
    encoder_hidden = 32

    [train]
    steps = 2000
    state_strategy = rsp
    sampling = count_weighted

    [data]
    domain_set = table

    [decode]
    beam_width = 8

Per-domain acoustic parameters are not INI-configurable; the [data] section
selects a built-in domain catalog ("pair" for the two-domain short/long
corpus, "table" for the four-domain weighted corpus) and sizes the generated
sets. Custom DomainSpec lists are a library-level feature.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import ModelConfig
from .states import StateStrategy
from .trainer import TrainConfig
from .validation import check_in


@dataclass
class DataConfig:
    corpus_seed: int = 0
    raw_dim: int = 2
    vocab_size: int = 16
    domain_set: str = "table"
    train_per_domain: int = 200
    test_per_domain: int = 40
    longform_factors: tuple[int, ...] = (1, 5, 20)
    longform_silence_frames: int = 2

    def __post_init__(self):
        check_in(self.domain_set, ("pair", "table"), "domain_set")
        if self.train_per_domain < 0 or self.test_per_domain < 0:
            raise ValueError("per-domain utterance counts must be >= 0")
        if any(k < 1 for k in self.longform_factors):
            raise ValueError("longform_factors must all be >= 1")


@dataclass
class DecodeConfig:
    beam_width: int = 8
    adaptive_margin: float | None = 8.0
    expansion_cap: int = 10
    final_expansion: bool = True

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.adaptive_margin is not None and self.adaptive_margin < 0:
            raise ValueError("adaptive_margin must be >= 0 or none")
        if self.expansion_cap < 1:
            raise ValueError("expansion_cap must be >= 1")


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)


class ConfigError(ValueError):
    """Malformed configuration file or invalid option value."""


_MODEL_KEYS = {f.name: f.type for f in fields(ModelConfig)}
_TRAIN_KEYS = {
    "batch_size": int,
    "steps": int,
    "eval_every": int,
    "learning_rate": float,
    "warmup_steps": int,
    "clip_norm": "optional_float",
    "seed": int,
    "state_strategy": str,
    "rss_scope": str,
    "rsp_pass_probability": float,
    "rsp_pool_capacity": int,
    "sampling": str,
    "eval_decode": str,
    "eval_beam_width": int,
    "eval_margin": "optional_float",
}
_DATA_KEYS = {
    "corpus_seed": int,
    "raw_dim": int,
    "vocab_size": int,
    "domain_set": str,
    "train_per_domain": int,
    "test_per_domain": int,
    "longform_factors": "int_list",
    "longform_silence_frames": int,
}
_DECODE_KEYS = {
    "beam_width": int,
    "adaptive_margin": "optional_float",
    "expansion_cap": int,
    "final_expansion": bool,
}
_SECTIONS = {
    "model": _MODEL_KEYS,
    "train": _TRAIN_KEYS,
    "data": _DATA_KEYS,
    "decode": _DECODE_KEYS,
}

_NONE_WORDS = {"none", "off"}
_TRUE_WORDS = {"true", "yes", "on", "1"}
_FALSE_WORDS = {"false", "no", "off", "0"}


def _coerce(section: str, key: str, raw: str, kind) -> object:
    value = raw.strip()
    try:
        if kind is int or kind == "int":
            return int(value)
        if kind is float or kind == "float":
            return float(value)
        if kind is bool or kind == "bool":
            lowered = value.lower()
            if lowered in _TRUE_WORDS:
                return True
            if lowered in _FALSE_WORDS:
                return False
            raise ValueError(f"expected a boolean, got {value!r}")
        if kind == "optional_float":
            if value.lower() in _NONE_WORDS:
                return None
            return float(value)
        if kind == "int_list":
            return tuple(int(part) for part in value.split(",") if part.strip())
        return value
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    values: dict[str, dict[str, object]] = {name: {} for name in _SECTIONS}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(
                f"{source}: unknown section [{section}] "
                f"(expected one of {sorted(_SECTIONS)})"
            )
        schema = _SECTIONS[section]
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError(
                    f"{source}: unknown key {key!r} in [{section}] "
                    f"(expected one of {sorted(schema)})"
                )
            values[section][key] = _coerce(section, key, raw, schema[key])
    try:
        model = ModelConfig(**values["model"])
        train = _build_train_config(values["train"])
        data = DataConfig(**values["data"])
        decode = DecodeConfig(**values["decode"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return ExperimentConfig(model=model, train=train, data=data, decode=decode)


def _build_train_config(raw: dict[str, object]) -> TrainConfig:
    raw = dict(raw)
    strategy_kwargs = {}
    if "state_strategy" in raw:
        strategy_kwargs["kind"] = str(raw.pop("state_strategy")).replace("-", "_")
    if "rss_scope" in raw:
        strategy_kwargs["rss_scope"] = str(raw.pop("rss_scope"))
    if "rsp_pass_probability" in raw:
        strategy_kwargs["pass_probability"] = raw.pop("rsp_pass_probability")
    kwargs: dict[str, object] = {}
    if strategy_kwargs:
        kwargs["state_strategy"] = StateStrategy(**strategy_kwargs)
    if "sampling" in raw:
        kwargs["sampling_strategy"] = str(raw.pop("sampling")).replace("-", "_")
    if "rsp_pool_capacity" in raw:
        kwargs["pool_capacity"] = raw.pop("rsp_pool_capacity")
    kwargs.update(raw)
    return TrainConfig(**kwargs)


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Read an INI file, or return all defaults when path is None."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))
