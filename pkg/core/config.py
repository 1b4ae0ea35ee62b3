"""Flat key=value run configuration: defaults, file parsing, overrides and validation."""

from __future__ import annotations

import logging
import os
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

from core.errors import ConfigError

__all__ = [
    "DEFAULTS",
    "MOTIF_COUNT",
    "load_config_file",
    "resolve_config",
    "validate_config",
    "format_config",
    "write_resolved",
    "effective_threads",
]

logger = logging.getLogger(__name__)

MOTIF_COUNT = 13

DEFAULTS: Dict[str, Any] = {
    # input module
    "buckets": 10,
    "embed_dim_profile": 16,
    "embed_dim_behavior": 16,
    "embed_dim_loan": 16,
    "encoder": "bucket",
    "input_dim": 64,
    # model
    "hidden_dim": 64,
    "att_dim": 16,
    "layers": 2,
    "head_dim": 32,
    "motifs": tuple(range(1, MOTIF_COUNT + 1)),
    "semantics": "pair_cooccurrence",
    "aggregate": "in",
    "variant": "full",
    "dropout": 0.0,
    # training
    "curriculum": True,
    "lr": 0.005,
    "epochs": 100,
    "batch_size": 256,
    "lambda_reg": 5e-4,
    "rescale_beta": True,
    "beta_stop_gradient": True,
    "seed": 0,
    "patience": 10,
    "task": "binary",
    "num_classes": 2,
    # runtime
    "threads": 0,
}

_CHOICES: Dict[str, Tuple[str, ...]] = {
    "encoder": ("bucket", "passthrough"),
    "semantics": ("pair_cooccurrence", "edge_preserving"),
    "aggregate": ("in", "out", "both"),
    "variant": ("full", "no-gate", "plain-gat"),
    "task": ("binary", "multiclass"),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: Any) -> Any:
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in _TRUE:
            return True
        if text in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        return _coerce_motifs(key, raw)
    try:
        if isinstance(default, int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(str(raw).strip()) if not isinstance(raw, (int, float)) else int(raw)
        if isinstance(default, float):
            return float(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {raw!r}") from exc
    return str(raw).strip()


def _coerce_motifs(key: str, raw: Any) -> Tuple[int, ...]:
    if isinstance(raw, str):
        text = raw.strip().lower()
        if text == "all":
            return tuple(range(1, MOTIF_COUNT + 1))
        if text in ("", "none"):
            return ()
        parts = [part.strip() for part in text.split(",") if part.strip()]
    elif isinstance(raw, Iterable):
        parts = list(raw)
    else:
        parts = [raw]
    try:
        values = sorted({int(part) for part in parts})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected comma separated motif indices, got {raw!r}") from exc
    return tuple(values)


def load_config_file(path: str) -> Dict[str, Any]:
    """Parse a flat ``key=value`` file into typed values.

    Blank lines and ``#`` comments are ignored. Unknown keys are rejected.
    """
    values: Dict[str, Any] = {}
    if not path or not os.path.isfile(path):
        raise ConfigError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{line_number}: expected key=value, got {stripped!r}")
            key, value = stripped.split("=", 1)
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{line_number}: unknown config key {key!r}")
            values[key] = _coerce(key, value.strip())
    return values


def resolve_config(
    file_values: Optional[Mapping[str, Any]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> Dict[str, Any]:
    """Merge defaults, file values and CLI overrides (in that order) and validate."""
    config = dict(DEFAULTS)
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            if value is None:
                continue
            config[key] = _coerce(key, value)
    if config["variant"] == "plain-gat":
        config["motifs"] = ()
    validate_config(config)
    return config


def validate_config(config: Mapping[str, Any]) -> None:
    unknown = sorted(set(config) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    for key, choices in _CHOICES.items():
        if config[key] not in choices:
            raise ConfigError(f"{key} must be one of {', '.join(choices)}; got {config[key]!r}")
    if config["buckets"] < 2:
        raise ConfigError(f"buckets must be >= 2; got {config['buckets']}")
    for key in ("embed_dim_profile", "embed_dim_behavior", "embed_dim_loan", "input_dim",
                "hidden_dim", "att_dim", "head_dim", "layers", "batch_size"):
        if config[key] < 1:
            raise ConfigError(f"{key} must be positive; got {config[key]}")
    for index in config["motifs"]:
        if not 1 <= index <= MOTIF_COUNT:
            raise ConfigError(f"motif index {index} outside 1..{MOTIF_COUNT}")
    if config["lr"] <= 0:
        raise ConfigError(f"lr must be positive; got {config['lr']}")
    if config["epochs"] < 0 or config["patience"] < 0:
        raise ConfigError("epochs and patience must be non-negative")
    if config["lambda_reg"] < 0:
        raise ConfigError(f"lambda_reg must be non-negative; got {config['lambda_reg']}")
    if not 0.0 <= config["dropout"] < 1.0:
        raise ConfigError(f"dropout must lie in [0, 1); got {config['dropout']}")
    if config["threads"] < 0:
        raise ConfigError(f"threads must be >= 0; got {config['threads']}")
    if config["task"] == "binary" and config["num_classes"] != 2:
        raise ConfigError("binary task requires num_classes = 2")
    if config["task"] == "multiclass" and config["num_classes"] < 2:
        raise ConfigError("multiclass task requires num_classes >= 2")


def format_config(config: Mapping[str, Any]) -> str:
    lines = []
    for key in sorted(config):
        value = config[key]
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, tuple):
            text = ",".join(str(item) for item in value) or "none"
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"


def write_resolved(config: Mapping[str, Any], out_dir: str, extra: Optional[Mapping[str, str]] = None) -> str:
    """Write ``config.resolved`` next to a run's outputs and return its path.

    ``extra`` carries the input paths, written as comments so the file stays
    loadable with :func:`load_config_file`.
    """
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.resolved")
    header = "".join(f"# {key}: {value}\n" for key, value in sorted((extra or {}).items()))
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(header + format_config(config))
    logger.debug("Wrote resolved config to %s", path)
    return path


def effective_threads(config: Mapping[str, Any]) -> int:
    threads = int(config.get("threads") or 0)
    if threads > 0:
        return threads
    return max(1, os.cpu_count() or 1)
