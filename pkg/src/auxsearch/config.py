"""Flat run configuration: search settings plus inner-loop hyperparameters in one TOML table."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .evolution import ConfigError, EvolutionConfig
from .rl_core.train import RLConfig

CONFIG_ECHO = "config.toml"


@dataclass(frozen=True)
class RunConfig:
    evolution: EvolutionConfig
    rl: RLConfig
    out: str = "runs/default"

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self.evolution)
        d.update(asdict(self.rl))
        d["out"] = self.out
        return d

    def to_toml(self) -> str:
        return dump_toml(self.to_dict())


def defaults() -> dict[str, Any]:
    return RunConfig(EvolutionConfig(), RLConfig()).to_dict()


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                pass
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")


def build_config(file_values: Mapping[str, Any] | None = None,
                 overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Defaults, then file values, then overrides; unknown keys are rejected."""
    base = defaults()
    merged = dict(base)
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if key not in base:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = _coerce(key, value, base[key])
    evo_keys = {f.name for f in fields(EvolutionConfig)}
    rl_keys = {f.name for f in fields(RLConfig)}
    evo = EvolutionConfig(**{k: v for k, v in merged.items() if k in evo_keys})
    try:
        rl = RLConfig(**{k: v for k, v in merged.items() if k in rl_keys})
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return RunConfig(evo, rl, merged["out"])


def load_toml(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: config must be flat, found tables {nested}")
    return data


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    return build_config(load_toml(path) if path is not None else None, overrides)


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        return json.dumps(v)  # JSON string escapes are valid TOML basic strings
    raise TypeError(f"unsupported config value {v!r}")


def dump_toml(values: Mapping[str, Any]) -> str:
    return "".join(f"{k} = {_toml_value(v)}\n" for k, v in values.items())
