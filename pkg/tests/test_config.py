import json
import logging
import sys
from pathlib import Path
from types import SimpleNamespace

import pytest
import yaml

from dsvae_lab.config import (
    DEFAULT_CONFIG,
    ENV_CONFIG_PATH,
    config_for_checkpoint,
    load_config,
    write_resolved_config,
)
from dsvae_lab.errors import ConfigError
from dsvae_lab.logging_utils import LOG_FILE, LOGGER_NAME, ColorFormatter, configure_logging


@pytest.fixture(autouse=True)
def _isolated(monkeypatch, tmp_path):
    monkeypatch.delenv(ENV_CONFIG_PATH, raising=False)
    monkeypatch.chdir(tmp_path)


def _write(path: Path, payload) -> Path:
    path.write_text(yaml.safe_dump(payload), encoding="utf-8")
    return path


def test_defaults_are_returned_without_sources(tmp_path):
    result = load_config(include_sources=True)
    assert result.sources == ()
    assert result.config["model"] == DEFAULT_CONFIG["model"]
    assert result.config["run"]["output_dir"] == str(tmp_path.resolve() / "runs" / "default")


def test_unknown_key_names_the_dotted_key_and_file(tmp_path):
    path = _write(tmp_path / "run.yaml", {"model": {"dim_q": 3}})
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.key == "model.dim_q"
    assert str(path) in str(info.value)


@pytest.mark.parametrize(
    "payload, key",
    [
        ({"model": {"dim_f": "8"}}, "model.dim_f"),
        ({"training": {"resume": 1}}, "training.resume"),
        ({"model": {"dim_z": True}}, "model.dim_z"),
        ({"data": "sprites"}, "data"),
    ],
)
def test_wrong_types_are_rejected(tmp_path, payload, key):
    with pytest.raises(ConfigError) as info:
        load_config(_write(tmp_path / "run.yaml", payload))
    assert info.value.key == key


def test_integers_are_accepted_for_float_settings(tmp_path):
    config = load_config(_write(tmp_path / "run.yaml", {"training": {"learning_rate": 1}}))
    assert config["training"]["learning_rate"] == 1


@pytest.mark.parametrize(
    "overrides, key",
    [
        ({"model.variant": "dsvae-lite"}, "model.variant"),
        ({"model.likelihood": "poisson"}, "model.likelihood"),
        ({"training.batch_size": 0}, "training.batch_size"),
        ({"data.square_fraction": 1.5}, "data.square_fraction"),
        ({"training.max_iterations": -1}, "training.max_iterations"),
        ({"training.learning_rate": -1e-3}, "training.learning_rate"),
        ({"classifier.epochs": 0}, "classifier.epochs"),
        ({"classifier.learning_rate": 0.0}, "classifier.learning_rate"),
    ],
)
def test_invalid_values_are_rejected(overrides, key):
    with pytest.raises(ConfigError) as info:
        load_config(overrides=overrides)
    assert info.value.key == key


def test_zero_learning_rate_is_accepted():
    config = load_config(overrides={"training.learning_rate": 0.0})
    assert config["training"]["learning_rate"] == 0.0


def test_relative_paths_resolve_against_the_config_directory(tmp_path):
    config_dir = tmp_path / "configs"
    config_dir.mkdir()
    path = _write(config_dir / "run.yaml", {"data": {"path": "../data/bounce.dsd"}, "run": {"output_dir": "/abs/run"}})
    config = load_config(path)
    assert config["data"]["path"] == str((tmp_path / "data" / "bounce.dsd").resolve())
    assert config["run"]["output_dir"] == "/abs/run"


def test_environment_variable_names_the_config(tmp_path, monkeypatch):
    path = _write(tmp_path / "env.yaml", {"run": {"seed": 17}})
    monkeypatch.setenv(ENV_CONFIG_PATH, str(path))
    result = load_config(include_sources=True)
    assert result.config["run"]["seed"] == 17
    assert result.sources == (str(path.resolve()),)


def test_overrides_win_and_none_values_are_skipped(tmp_path):
    path = _write(tmp_path / "run.yaml", {"run": {"seed": 3, "threads": 2}})
    config = load_config(path, overrides={"run.seed": 9, "run.threads": None})
    assert config["run"]["seed"] == 9
    assert config["run"]["threads"] == 2


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("model: [unclosed", encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(broken)
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="mapping at the root"):
        load_config(listing)


def test_resolved_config_sits_next_to_the_checkpoint(tmp_path):
    config = load_config(overrides={"model.variant": "lstm-c", "run.seed": 4})
    run_dir = tmp_path / "run"
    written = write_resolved_config(config, run_dir)
    assert written.name == "config.yaml"
    restored = config_for_checkpoint(run_dir / "model.ckpt")
    assert restored == config
    assert config_for_checkpoint(run_dir / "model.ckpt", overrides={"run.threads": 3})["run"]["threads"] == 3
    with pytest.raises(ConfigError):
        config_for_checkpoint(tmp_path / "elsewhere" / "model.ckpt")


def test_file_logging_writes_json_records(tmp_path):
    config = {"console_level": "WARNING", "file_level": "DEBUG", "json_logs": True, "log_dir": str(tmp_path)}
    logger = configure_logging(config, command="train")
    try:
        assert logger.name == LOGGER_NAME
        child = logging.getLogger(f"{LOGGER_NAME}.training")
        child.debug("step %d", 3)
        child.info("flushed", extra={"iteration": 12})
        for handler in logger.handlers:
            handler.flush()
        records = [json.loads(line) for line in (tmp_path / LOG_FILE).read_text(encoding="utf-8").splitlines()]
        assert records[-2]["message"] == "step 3"
        assert records[-2]["level"] == "DEBUG"
        assert records[-2]["logger"] == f"{LOGGER_NAME}.training"
        assert records[-2]["command"] == "train"
        assert "iteration" not in records[-2]
        assert records[-1]["iteration"] == 12
    finally:
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            handler.close()


def test_reconfiguring_replaces_handlers(tmp_path):
    configure_logging({"log_dir": str(tmp_path)})
    logger = configure_logging({"log_dir": str(tmp_path)})
    try:
        assert len(logger.handlers) == 2
    finally:
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            handler.close()


def test_console_colours_follow_the_terminal(monkeypatch):
    record = logging.LogRecord("dsvae_lab", logging.INFO, __file__, 1, "ready", None, None)
    monkeypatch.setattr(sys, "stderr", SimpleNamespace(isatty=lambda: False))
    assert ColorFormatter("%(message)s", use_color=True).format(record) == "ready"
    monkeypatch.setattr(sys, "stderr", SimpleNamespace(isatty=lambda: True))
    assert ColorFormatter("%(message)s", use_color=True).format(record) == "\033[32mready\033[0m"
    assert ColorFormatter("%(message)s", use_color=False).format(record) == "ready"
