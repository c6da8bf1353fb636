"""Pipeline config: dataclass defaults < key=value config file (python-dotenv) < CLI flags."""
from __future__ import annotations

import os
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional

from dotenv import dotenv_values

from .errors import ConfigError
from .models import PipelineConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_pair(text: str) -> tuple:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'low,high', got {text!r}")
    low, high = float(parts[0]), float(parts[1])
    if low > high:
        raise ValueError(f"range low {low} > high {high}")
    return (low, high)


def _names(text: str) -> tuple:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _optional(convert: Callable[[str], Any]) -> Callable[[str], Any]:
    return lambda text: None if text.strip().lower() in ("", "none") else convert(text)


_CONVERTERS: Dict[str, Callable[[str], Any]] = {
    "int": int,
    "float": float,
    "bool": _bool,
    "str": str,
    "Optional[str]": _optional(str),
    "Optional[int]": _optional(int),
    "Tuple[float, float]": _float_pair,
    "Tuple[str, ...]": _names,
}


def parse_config(values: Mapping[str, Optional[str]], base: Optional[PipelineConfig] = None) -> PipelineConfig:
    config = base or PipelineConfig()
    known = {f.name: f for f in fields(PipelineConfig)}
    updates: Dict[str, Any] = {}
    for key, raw in values.items():
        name = key.strip().lower()
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        convert = _CONVERTERS[str(known[name].type)]
        try:
            updates[name] = convert(raw or "")
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from exc
    return replace(config, **updates)


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    """Read the config file (or $DNS_CONFIG), then apply already-typed CLI overrides."""
    path = path or os.getenv("DNS_CONFIG") or None
    config = PipelineConfig()
    if path:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        config = parse_config(dotenv_values(path), config)
    if overrides:
        config = replace(config, **{k: v for k, v in overrides.items() if v is not None})
    validate_config(config)
    return config


def validate_config(config: PipelineConfig) -> None:
    if config.sample_rate <= 0:
        raise ConfigError("sample_rate must be positive")
    if config.duration_s <= 0 or config.test_duration_s <= 0:
        raise ConfigError("durations must be positive")
    if config.group_size < 3:
        raise ConfigError("group_size must be >= 3 (one gold, one trap, one real clip)")
    if config.ratings_per_clip < 1:
        raise ConfigError("ratings_per_clip must be >= 1")
    if not 0.0 < config.headroom_peak <= 1.0:
        raise ConfigError("headroom_peak must lie in (0, 1]")
    if config.master_seed < 0 or config.master_seed >= 1 << 64:
        raise ConfigError("master_seed must be an unsigned 64-bit integer")


def config_to_dict(config: PipelineConfig) -> Dict[str, Any]:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(config).items()}
