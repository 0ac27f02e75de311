"""Tiny models and binary datasets that run in milliseconds."""

from __future__ import annotations

import numpy as np

from dsvae_lab.core.rng import make_rng
from dsvae_lab.models import build_model
from dsvae_lab.utils.datasets import FRAMES, DatasetFile

TINY_MODEL = {
    "dim_f": 3,
    "dim_z": 2,
    "hidden": 6,
    "feature_dim": 5,
    "channels": 2,
    "conv_layers": 1,
    "likelihood": "bernoulli",
    "mixture_components": 2,
}


def tiny_model(variant: str = "dsvae-factorised", frame_shape=(1, 4, 4), *, seed: int = 0, **changes):
    config = {**TINY_MODEL, "variant": variant, **changes}
    return build_model(config, frame_shape, make_rng(seed, "init"))


def binary_frames(batch: int, steps: int, size: int = 8, *, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (rng.random((batch, steps, 1, size, size)) < 0.3).astype(np.float32)


def binary_dataset(batch: int, steps: int, size: int = 8, *, seed: int = 0, labels=None) -> DatasetFile:
    payload = (binary_frames(batch, steps, size, seed=seed) * 255).astype(np.uint8)
    return DatasetFile(kind=FRAMES, payload=payload, labels=dict(labels or {}))
