"""Shared fixtures for the dsvae_lab test suite."""

from __future__ import annotations

import copy
import logging

import pytest

from dsvae_lab.config import DEFAULT_CONFIG
from dsvae_lab.core.rng import make_rng
from factories import TINY_MODEL


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run the desk-scale experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def logger():
    return logging.getLogger("dsvae_lab.tests")


@pytest.fixture
def rng():
    return make_rng(0, "eval")


@pytest.fixture
def tiny_config(tmp_path):
    """A full run configuration sized for 16x16 sprites and a handful of iterations."""

    config = copy.deepcopy(DEFAULT_CONFIG)
    config["run"]["output_dir"] = str(tmp_path / "run")
    config["data"]["path"] = str(tmp_path / "sprites.dsd")
    config["model"].update(TINY_MODEL, conv_layers=2, channels=3)
    config["training"].update(epochs=1, batch_size=4, checkpoint_every=1000, metrics_flush_every=2)
    config["classifier"].update(epochs=1, batch_size=32, hidden=8, channels=3, conv_layers=2)
    config["logging"]["color"] = False
    return config
