"""Configuration loading and validation for dsvae_lab runs."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, MutableMapping, Tuple

import yaml

from .errors import ConfigError

ENV_CONFIG_PATH = "DSVAE_LAB_CONFIG"
RESOLVED_CONFIG_NAME = "config.yaml"
COMMAND_LINE = "<command line>"

VARIANTS = ("dsvae-factorised", "dsvae-full", "lstm-f", "lstm-c")
LIKELIHOODS = ("fixed_l2", "diag_gaussian", "bernoulli", "stroke_mixture")
DATA_KINDS = ("sprites", "bounce", "strokes")
WARMUP_MODES = ("auto", "on", "off")

PATH_KEYS: Tuple[Tuple[str, str], ...] = (
    ("run", "output_dir"),
    ("data", "path"),
    ("training", "checkpoint_path"),
    ("classifier", "path"),
)


DEFAULT_CONFIG: Dict[str, Any] = {
    "run": {
        "seed": 0,
        "output_dir": "runs/default",
        "monitor_system": False,
        "threads": 1,
    },
    "data": {
        "kind": "sprites",
        "path": "data/sprites.dsd",
        "length": 0,
        "resolution": 32,
        "radius": 3.0,
        "speed": 2.0,
        "square_fraction": 0.0,
    },
    "model": {
        "variant": "dsvae-factorised",
        "dim_f": 32,
        "dim_z": 8,
        "hidden": 64,
        "feature_dim": 64,
        "channels": 32,
        "conv_layers": 3,
        "likelihood": "bernoulli",
        "mixture_components": 10,
    },
    "training": {
        "epochs": 20,
        "batch_size": 32,
        "learning_rate": 1e-3,
        "warmup": "auto",
        "warmup_iters": 10000,
        "checkpoint_path": "",
        "checkpoint_every": 500,
        "max_iterations": 0,
        "clip_norm": 5.0,
        "metrics_flush_every": 50,
        "resume": False,
    },
    "classifier": {
        "epochs": 10,
        "batch_size": 64,
        "learning_rate": 1e-3,
        "hidden": 64,
        "channels": 16,
        "conv_layers": 2,
        "path": "",
    },
    "logging": {
        "console_level": "INFO",
        "file_level": "DEBUG",
        "json_logs": False,
        "color": True,
    },
}


@dataclass(frozen=True)
class ConfigLoadResult:
    """Container for the merged configuration."""

    config: Dict[str, Any]
    sources: Tuple[str, ...]


def _load_yaml(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise ConfigError("configuration file not found", source=path)
    try:
        with path.open("r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", source=path) from exc
    if not isinstance(data, MutableMapping):
        raise ConfigError("configuration must contain a mapping at the root", source=path)
    return dict(data)


def _check_value(key: str, default: Any, value: Any, source: str | Path) -> None:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(
            f"expected {type(default).__name__}, got {type(value).__name__} ({value!r})", key=key, source=source
        )


def _check_keys(overlay: Mapping[str, Any], defaults: Mapping[str, Any], source: str | Path, prefix: str = "") -> None:
    """Reject keys absent from ``defaults`` and values of the wrong type."""

    for key, value in overlay.items():
        dotted = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError("unknown configuration key", key=dotted, source=source)
        default = defaults[key]
        if isinstance(default, Mapping):
            if not isinstance(value, Mapping):
                raise ConfigError("expected a mapping", key=dotted, source=source)
            _check_keys(value, default, source, dotted + ".")
        else:
            _check_value(dotted, default, value, source)


def _deep_merge(base: Mapping[str, Any], overlay: Mapping[str, Any]) -> Dict[str, Any]:
    merged: Dict[str, Any] = dict(base)
    for key, value in overlay.items():
        if (
            key in merged
            and isinstance(merged[key], MutableMapping)
            and isinstance(value, MutableMapping)
        ):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _resolve_path(base_dir: Path, value: str) -> str:
    if not value:
        return value
    path = Path(value)
    if path.is_absolute():
        return str(path)
    return str((base_dir / path).resolve())


def _resolve_file_paths(data: Dict[str, Any], base_dir: Path) -> Dict[str, Any]:
    for section, key in PATH_KEYS:
        block = data.get(section)
        if isinstance(block, MutableMapping) and isinstance(block.get(key), str):
            block[key] = _resolve_path(base_dir, block[key])
    return data


def _collect_sources(path: str | Path | None) -> Iterable[Path]:
    if path:
        yield Path(path)
        return
    env_path = os.getenv(ENV_CONFIG_PATH)
    if env_path:
        yield Path(env_path)


def _overrides_tree(overrides: Mapping[str, Any]) -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for dotted, value in overrides.items():
        if value is None:
            continue
        parts = dotted.split(".")
        node = tree
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return tree


def _validate_config(config: Dict[str, Any], source: str | Path) -> Dict[str, Any]:
    model, data, training = config["model"], config["data"], config["training"]
    choices = (
        ("model.variant", model["variant"], VARIANTS),
        ("model.likelihood", model["likelihood"], LIKELIHOODS),
        ("data.kind", data["kind"], DATA_KINDS),
        ("training.warmup", training["warmup"], WARMUP_MODES),
    )
    for key, value, allowed in choices:
        if value not in allowed:
            raise ConfigError(f"{value!r} is not one of {list(allowed)}", key=key, source=source)
    positive = (
        ("model.dim_f", model["dim_f"]),
        ("model.dim_z", model["dim_z"]),
        ("model.hidden", model["hidden"]),
        ("model.feature_dim", model["feature_dim"]),
        ("model.channels", model["channels"]),
        ("model.conv_layers", model["conv_layers"]),
        ("model.mixture_components", model["mixture_components"]),
        ("training.batch_size", training["batch_size"]),
        ("training.epochs", training["epochs"]),
        ("training.checkpoint_every", training["checkpoint_every"]),
        ("training.metrics_flush_every", training["metrics_flush_every"]),
        ("classifier.batch_size", config["classifier"]["batch_size"]),
        ("classifier.epochs", config["classifier"]["epochs"]),
        ("classifier.learning_rate", config["classifier"]["learning_rate"]),
        ("run.threads", config["run"]["threads"]),
    )
    for key, value in positive:
        if value <= 0:
            raise ConfigError(f"must be > 0, got {value}", key=key, source=source)
    if training["learning_rate"] < 0:
        raise ConfigError("must be >= 0 (0 freezes the parameters)", key="training.learning_rate", source=source)
    if training["warmup_iters"] < 0:
        raise ConfigError("must be >= 0", key="training.warmup_iters", source=source)
    if training["max_iterations"] < 0:
        raise ConfigError("must be >= 0 (0 = no cap)", key="training.max_iterations", source=source)
    if data["length"] < 0:
        raise ConfigError("must be >= 0 (0 = generator default)", key="data.length", source=source)
    if not 0.0 <= data["square_fraction"] <= 1.0:
        raise ConfigError("must lie in [0, 1]", key="data.square_fraction", source=source)
    return config


def load_config(
    path: str | Path | None = None,
    *,
    overrides: Mapping[str, Any] | None = None,
    include_sources: bool = False,
) -> ConfigLoadResult | Dict[str, Any]:
    """Defaults, then the config file (or ``DSVAE_LAB_CONFIG``), then dotted-key overrides."""

    config: Dict[str, Any] = json.loads(json.dumps(DEFAULT_CONFIG))
    sources: list[str] = []
    last_source: str | Path = "<defaults>"

    for source in _collect_sources(path):
        data = _load_yaml(source)
        _check_keys(data, DEFAULT_CONFIG, source)
        data = _resolve_file_paths(json.loads(json.dumps(data)), source.resolve().parent)
        config = _deep_merge(config, data)
        sources.append(str(source.resolve()))
        last_source = source

    if overrides:
        tree = _overrides_tree(overrides)
        _check_keys(tree, DEFAULT_CONFIG, COMMAND_LINE)
        config = _deep_merge(config, tree)
        last_source = COMMAND_LINE

    config = json.loads(json.dumps(config))  # deep copy via JSON for immutability
    config = _resolve_file_paths(config, Path.cwd())
    config = _validate_config(config, last_source)

    result = ConfigLoadResult(config=config, sources=tuple(sources))
    if include_sources:
        return result
    return result.config


def write_resolved_config(config: Mapping[str, Any], output_dir: str | Path) -> Path:
    """Atomically write ``config.yaml`` into ``output_dir``."""

    directory = Path(output_dir)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / RESOLVED_CONFIG_NAME
    tmp = path.with_suffix(".tmp")
    with tmp.open("w", encoding="utf-8") as handle:
        yaml.safe_dump(json.loads(json.dumps(config)), handle, sort_keys=True)
    tmp.replace(path)
    return path


def config_for_checkpoint(checkpoint: str | Path, *, overrides: Mapping[str, Any] | None = None) -> Dict[str, Any]:
    """Load the resolved configuration stored next to a checkpoint."""

    path = Path(checkpoint).resolve().parent / RESOLVED_CONFIG_NAME
    if not path.exists():
        raise ConfigError(f"no {RESOLVED_CONFIG_NAME} next to checkpoint {checkpoint}", source=path)
    return load_config(path, overrides=overrides)  # type: ignore[return-value]


__all__ = [
    "DATA_KINDS",
    "DEFAULT_CONFIG",
    "ENV_CONFIG_PATH",
    "LIKELIHOODS",
    "VARIANTS",
    "ConfigLoadResult",
    "config_for_checkpoint",
    "load_config",
    "write_resolved_config",
]
