from __future__ import annotations

from collections.abc import Mapping
from dataclasses import fields
from pathlib import Path
from typing import Any, get_args

import yaml

from theta_expansions.errors import ConfigError, ThetaExpansionError
from theta_expansions.models import ExperimentConfig, NormingFamily, NormingSequence

THREADS_ENVVAR = "THETA_EXPANSIONS_THREADS"

_NORMING_KEYS = {"norming", "norming_p", "norming_table"}
CONFIG_KEYS = frozenset(
    {f.name for f in fields(ExperimentConfig) if f.name != "norming"} | _NORMING_KEYS
)


def load_config_file(path: Path) -> dict[str, Any]:
    """Read a YAML mapping of experiment settings."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}", path=str(path)) from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}", path=str(path)) from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping", path=str(path))
    unknown = sorted(str(key) for key in data if key not in CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}", keys=unknown)
    return data


def _as_int(key: str, value: Any) -> int:
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {value!r}", key=key) from None
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}", key=key)
    return value


def _as_float(key: str, value: Any) -> float:
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {value!r}", key=key) from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}", key=key)
    return float(value)


def _as_list(key: str, value: Any) -> list[Any]:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    if isinstance(value, (list, tuple)):
        return list(value)
    raise ConfigError(f"{key} must be a list, got {value!r}", key=key)


def _norming(values: Mapping[str, Any]) -> NormingSequence:
    family = values.get("norming", "n_log_n")
    if family not in get_args(NormingFamily):
        raise ConfigError(
            f"unknown norming family {family!r}", choices=list(get_args(NormingFamily))
        )
    raw_table = _as_list("norming_table", values.get("norming_table", []))
    table = tuple(_as_float("norming_table", v) for v in raw_table)
    if table and family != "table":
        raise ConfigError("norming_table requires norming: table")
    return NormingSequence(
        family=family,
        p=_as_float("norming_p", values.get("norming_p", 1.0)),
        table=table,
    )


def resolve_config(
    flags: Mapping[str, Any], file_values: Mapping[str, Any] | None = None
) -> ExperimentConfig:
    """Merge command-line flags over config file values over defaults.

    Flags left at ``None`` do not override anything.
    """
    merged: dict[str, Any] = dict(file_values or {})
    merged.update({key: value for key, value in flags.items() if value is not None})

    kwargs: dict[str, Any] = {"norming": _norming(merged)}
    for key in ("m", "n", "trials", "seed", "threads", "points_per_decade"):
        if key in merged:
            kwargs[key] = _as_int(key, merged[key])
    if "M" in merged:
        kwargs["M"] = _as_float("M", merged["M"])
    if "epsilons" in merged:
        kwargs["epsilons"] = tuple(
            _as_float("epsilons", v)
            for v in _as_list("epsilons", merged["epsilons"])
        )
    if "checkpoints" in merged:
        kwargs["checkpoints"] = tuple(
            _as_int("checkpoints", v)
            for v in _as_list("checkpoints", merged["checkpoints"])
        )
    try:
        return ExperimentConfig(**kwargs)
    except ValueError as exc:
        if isinstance(exc, ThetaExpansionError):
            raise
        raise ConfigError(str(exc)) from exc
