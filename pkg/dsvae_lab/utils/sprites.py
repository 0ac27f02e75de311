"""Toy sprite sequences with labelled content attributes and actions.

Content (shape, grey level, size) is fixed per sequence; the action sets the
trajectory. Each frame carries a small pose marker on the leading side of the
object whose length alternates with t, so the action is visible per frame.
"""

from __future__ import annotations

from typing import Dict, List, Tuple

import numpy as np

from ..core.rng import make_rng
from ..errors import DomainError
from .datasets import FRAMES, TEST, TRAIN, DatasetFile

SHAPES = ("circle", "square", "triangle")
GREY_LEVELS = (255, 170, 96)
SIZES = (2, 3)
ACTIONS = ("move-right", "move-down", "diagonal")
CATEGORIES = ("shape", "color", "size", "action")
FRAME_SIZE = 16
LENGTH = 8
MARKER = 255
NUM_CONTENT = len(SHAPES) * len(GREY_LEVELS) * len(SIZES)

_DIRECTIONS = {0: (1, 0), 1: (0, 1), 2: (1, 1)}


def content_index(shape: int, color: int, size: int) -> int:
    return (shape * len(GREY_LEVELS) + color) * len(SIZES) + size


def is_test_combination(content: int, action: int) -> bool:
    return (content + action) % 6 == 0


def shape_mask(shape: int, radius: int, frame_size: int, cx: int, cy: int) -> np.ndarray:
    rows, cols = np.mgrid[0:frame_size, 0:frame_size]
    dx, dy = cols - cx, rows - cy
    if SHAPES[shape] == "circle":
        return dx * dx + dy * dy <= radius * radius + 0.5
    if SHAPES[shape] == "square":
        return (np.abs(dx) <= radius) & (np.abs(dy) <= radius)
    return (np.abs(dy) <= radius) & (2 * np.abs(dx) <= dy + radius)


def marker_pixels(action: int, radius: int, cx: int, cy: int, t: int) -> List[Tuple[int, int]]:
    """(row, col) pixels of the pose marker for frame ``t``."""

    extent = 1 + t % 2
    if action == 0:
        return [(cy + k, cx + radius + 1) for k in range(1 - extent, extent)]
    if action == 1:
        return [(cy + radius + 1, cx + k) for k in range(1 - extent, extent)]
    corner = [(cy + radius + 1, cx + radius + 1)]
    if extent == 2:
        corner += [(cy + radius + 1, cx + radius), (cy + radius, cx + radius + 1)]
    return corner


def _start(moving: bool, radius: int, jitter: int, length: int, frame_size: int) -> int:
    if moving:
        low, high = radius, frame_size - 2 - radius - (length - 1)
        return int(np.clip(radius + 1 + jitter, low, high))
    return frame_size // 2 - 1 + jitter


def render_sequence(
    shape: int, color: int, size: int, action: int, jitter: Tuple[int, int], *, length: int = LENGTH, frame_size: int = FRAME_SIZE
) -> np.ndarray:
    radius = SIZES[size]
    step_x, step_y = _DIRECTIONS[action]
    x0 = _start(bool(step_x), radius, jitter[0], length, frame_size)
    y0 = _start(bool(step_y), radius, jitter[1], length, frame_size)
    frames = np.zeros((length, 1, frame_size, frame_size), dtype=np.uint8)
    for t in range(length):
        cx, cy = x0 + step_x * t, y0 + step_y * t
        frame = frames[t, 0]
        frame[shape_mask(shape, radius, frame_size, cx, cy)] = GREY_LEVELS[color]
        for row, col in marker_pixels(action, radius, cx, cy, t):
            if 0 <= row < frame_size and 0 <= col < frame_size:
                frame[row, col] = MARKER
    return frames


def gen_sprites(n: int, seed: int, *, length: int = LENGTH, frame_size: int = FRAME_SIZE) -> DatasetFile:
    """``n`` sequences with uniformly drawn attribute/action combinations.

    Combinations with (content index + action) divisible by 6 form the test
    split, so test sequences show pairings never seen in training.
    """

    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    payload = np.zeros((n, length, 1, frame_size, frame_size), dtype=np.uint8)
    labels: Dict[str, np.ndarray] = {name: np.zeros(n, dtype=np.uint16) for name in (*CATEGORIES, "content", "split")}
    for index in range(n):
        rng = make_rng(seed, "synth", 0, index)
        shape = int(rng.integers(len(SHAPES)))
        color = int(rng.integers(len(GREY_LEVELS)))
        size = int(rng.integers(len(SIZES)))
        action = int(rng.integers(len(ACTIONS)))
        jitter = (int(rng.integers(-1, 2)), int(rng.integers(-1, 2)))
        payload[index] = render_sequence(shape, color, size, action, jitter, length=length, frame_size=frame_size)
        content = content_index(shape, color, size)
        for name, value in zip(CATEGORIES, (shape, color, size, action)):
            labels[name][index] = value
        labels["content"][index] = content
        labels["split"][index] = TEST if is_test_combination(content, action) else TRAIN
    return DatasetFile(kind=FRAMES, payload=payload, labels=labels)


__all__ = [
    "ACTIONS",
    "CATEGORIES",
    "GREY_LEVELS",
    "NUM_CONTENT",
    "SHAPES",
    "SIZES",
    "content_index",
    "gen_sprites",
    "is_test_combination",
    "marker_pixels",
    "render_sequence",
]
