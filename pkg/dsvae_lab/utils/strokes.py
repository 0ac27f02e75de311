"""Toy pen-stroke drawings of circles, squares and triangles.

Each drawing is a list of 5-d points (dx, dy, p1, p2, p3): p1 pen down,
p2 pen lifted after this point, p3 end of drawing. Sequences are padded to a
fixed length with (0, 0, 0, 0, 1).
"""

from __future__ import annotations

import math

import numpy as np

from ..core.rng import make_rng
from ..errors import DomainError
from .datasets import VECTORS, DatasetFile, split_last_fifth

SHAPES = ("circle", "square", "triangle")
MAX_LENGTH = 20
END = np.array([0.0, 0.0, 0.0, 0.0, 1.0], dtype=np.float32)
POINT_JITTER = 0.02


def outline(shape: int, rng: np.random.Generator) -> np.ndarray:
    """Closed polyline for ``shape`` in unit scale; the last point repeats the first."""

    if SHAPES[shape] == "circle":
        count = int(rng.integers(12, 18))
        angles = np.linspace(0.0, 2.0 * math.pi, count + 1)
        points = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    else:
        corners = 4 if SHAPES[shape] == "square" else 3
        angles = np.linspace(0.0, 2.0 * math.pi, corners + 1) + math.pi / 4
        vertices = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        per_side = int(rng.integers(2, 5))
        parts = [
            vertices[k] + (vertices[k + 1] - vertices[k]) * s
            for k in range(corners)
            for s in np.arange(per_side) / per_side
        ]
        points = np.vstack([np.asarray(parts), vertices[:1]])
    points[-1] = points[0]
    return points


def style(points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-drawing scale, aspect and rotation: the time-invariant factor."""

    scale = rng.uniform(0.6, 1.0)
    aspect = rng.uniform(0.8, 1.25)
    theta = rng.uniform(-math.pi / 6, math.pi / 6)
    rotation = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    return (points * np.array([scale * aspect, scale / aspect])) @ rotation.T


def to_strokes(points: np.ndarray, length: int = MAX_LENGTH) -> np.ndarray:
    """Offsets between consecutive points, pen state, end marker and padding."""

    deltas = np.diff(points, axis=0)
    if len(deltas) >= length:
        raise DomainError(f"drawing with {len(deltas)} offsets does not fit {length} steps")
    out = np.tile(END, (length, 1))
    out[: len(deltas), :2] = deltas
    out[: len(deltas), 2:] = (1.0, 0.0, 0.0)
    out[len(deltas) - 1, 2:] = (0.0, 1.0, 0.0)
    return out


def drawing(shape: int, rng: np.random.Generator, length: int = MAX_LENGTH) -> np.ndarray:
    points = style(outline(shape, rng), rng)
    points[1:-1] += rng.normal(0.0, POINT_JITTER, size=points[1:-1].shape)
    return to_strokes(points, length)


def gen_strokes(n: int, seed: int, *, length: int = MAX_LENGTH) -> DatasetFile:
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    payload = np.zeros((n, length, 5), dtype=np.float32)
    shapes = np.zeros(n, dtype=np.uint16)
    for index in range(n):
        rng = make_rng(seed, "synth", 2, index)
        shape = int(rng.integers(len(SHAPES)))
        payload[index] = drawing(shape, rng, length)
        shapes[index] = shape
    return DatasetFile(kind=VECTORS, payload=payload, labels={"shape": shapes, "split": split_last_fifth(n)})


__all__ = ["END", "MAX_LENGTH", "SHAPES", "drawing", "gen_strokes", "outline", "style", "to_strokes"]
