"""Elastic ball-in-polygon simulator and the bouncing-ball dataset.

Coordinates are in pixels with x to the right and y down. The arena is
described in a 32-unit space and scaled to the render resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np

from ..core.rng import make_rng
from ..errors import DomainError
from .datasets import FRAMES, DatasetFile, split_last_fifth

ARENA_UNITS = 32.0
DEFAULT_VERTICES: Tuple[Tuple[float, float], ...] = (
    (4.0, 2.0),
    (28.0, 4.0),
    (30.0, 14.0),
    (24.0, 28.0),
    (12.0, 30.0),
    (3.0, 22.0),
    (2.0, 10.0),
)
SUBSTEPS = 8
BALL, SQUARE = "ball", "square"
_MAX_BOUNCES = 16
_EPS = 1e-12


@dataclass(frozen=True)
class PolygonArena:
    vertices: Tuple[Tuple[float, float], ...] = DEFAULT_VERTICES

    def __post_init__(self) -> None:
        if len(self.vertices) < 3:
            raise DomainError("an arena needs at least three vertices")
        if abs(self.signed_area) < _EPS:
            raise DomainError("degenerate arena polygon")

    @classmethod
    def default(cls, resolution: int = 32) -> "PolygonArena":
        factor = resolution / ARENA_UNITS
        return cls(tuple((x * factor, y * factor) for x, y in DEFAULT_VERTICES))

    @property
    def signed_area(self) -> float:
        pts = np.asarray(self.vertices, dtype=np.float64)
        x, y = pts[:, 0], pts[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def edges(self) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """(start, unit direction, inward unit normal) per edge, in vertex order."""

        orientation = 1.0 if self.signed_area > 0 else -1.0
        pts = np.asarray(self.vertices, dtype=np.float64)
        out = []
        for index in range(len(pts)):
            start, end = pts[index], pts[(index + 1) % len(pts)]
            direction = end - start
            length = float(np.hypot(*direction))
            unit = direction / length
            normal = orientation * np.array([-unit[1], unit[0]])
            out.append((start, unit * length, normal))
        return out

    def clearance(self, point: Sequence[float]) -> float:
        """Smallest distance from ``point`` to any edge segment."""

        p = np.asarray(point, dtype=np.float64)
        best = math.inf
        for start, direction, _ in self.edges():
            t = float(np.clip(np.dot(p - start, direction) / np.dot(direction, direction), 0.0, 1.0))
            best = min(best, float(np.hypot(*(p - (start + t * direction)))))
        return best

    def bounds(self) -> Tuple[float, float, float, float]:
        pts = np.asarray(self.vertices)
        return float(pts[:, 0].min()), float(pts[:, 1].min()), float(pts[:, 0].max()), float(pts[:, 1].max())


@dataclass(frozen=True)
class BallState:
    position: Tuple[float, float]
    velocity: Tuple[float, float]
    radius: float
    shape: str = BALL

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


def point_in_polygon(point: Sequence[float], vertices: Sequence[Sequence[float]]) -> bool:
    """Even-odd ray casting test."""

    x, y = float(point[0]), float(point[1])
    inside = False
    count = len(vertices)
    for index in range(count):
        x1, y1 = vertices[index]
        x2, y2 = vertices[(index + 1) % count]
        if (y1 > y) != (y2 > y):
            crossing = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < crossing:
                inside = not inside
    return inside


def check_state(state: BallState, arena: PolygonArena) -> None:
    if state.radius <= 0:
        raise DomainError(f"ball radius must be positive, got {state.radius}")
    if not point_in_polygon(state.position, arena.vertices):
        raise DomainError(f"ball centre {state.position} lies outside the arena")
    if arena.clearance(state.position) < state.radius - 1e-9:
        raise DomainError(f"ball at {state.position} overlaps the arena wall")


def reflect(velocity: np.ndarray, normal: np.ndarray) -> np.ndarray:
    return velocity - 2.0 * np.dot(velocity, normal) * normal


def _advance(position: np.ndarray, velocity: np.ndarray, h: float, radius: float, edges) -> Tuple[np.ndarray, np.ndarray]:
    remaining = h
    for _ in range(_MAX_BOUNCES):
        target = position + velocity * remaining
        hit_index, hit_fraction = -1, math.inf
        for index, (start, direction, normal) in enumerate(edges):
            before = float(np.dot(position - start, normal)) - radius
            after = float(np.dot(target - start, normal)) - radius
            if before < -1e-9 or after >= 0.0 or np.dot(velocity, normal) >= 0.0:
                continue
            fraction = max(0.0, before) / (max(0.0, before) - after)
            contact = position + velocity * remaining * fraction
            along = float(np.dot(contact - start, direction) / np.dot(direction, direction))
            if not -1e-9 <= along <= 1.0 + 1e-9:
                continue
            if fraction < hit_fraction:
                hit_index, hit_fraction = index, fraction
        if hit_index < 0:
            return target, velocity
        position = position + velocity * remaining * hit_fraction
        velocity = reflect(velocity, edges[hit_index][2])
        remaining *= 1.0 - hit_fraction
    return position, velocity


def step_ball(state: BallState, arena: PolygonArena, dt: float = 1.0, *, substeps: int = SUBSTEPS) -> BallState:
    """Advance by ``dt`` in ``substeps`` sub-steps with exact specular reflection.

    The earliest wall crossing in a sub-step wins; ties go to the lower edge index.
    """

    check_state(state, arena)
    edges = arena.edges()
    position = np.asarray(state.position, dtype=np.float64)
    velocity = np.asarray(state.velocity, dtype=np.float64)
    h = dt / substeps
    for _ in range(substeps):
        position, velocity = _advance(position, velocity, h, state.radius, edges)
    return replace(state, position=(float(position[0]), float(position[1])), velocity=(float(velocity[0]), float(velocity[1])))


def simulate(state: BallState, arena: PolygonArena, steps: int, dt: float = 1.0) -> List[BallState]:
    """Return ``steps`` states starting with ``state`` itself."""

    states = [state]
    for _ in range(steps - 1):
        states.append(step_ball(states[-1], arena, dt))
    return states


def divergence(
    state: BallState, arena: PolygonArena, *, perturbation: float = 1e-3, frames: int = 30
) -> float:
    """Largest centre distance between a trajectory and one started ``perturbation`` away in x."""

    shifted = replace(state, position=(state.position[0] + perturbation, state.position[1]))
    first = simulate(state, arena, frames)
    second = simulate(shifted, arena, frames)
    return max(math.dist(a.position, b.position) for a, b in zip(first, second))


# ----------------------------------------------------------------------
def render(state: BallState, resolution: int) -> np.ndarray:
    """Binary frame: a pixel is lit iff its centre lies inside the shape."""

    centres = np.arange(resolution, dtype=np.float64) + 0.5
    dx = centres[None, :] - state.position[0]
    dy = centres[:, None] - state.position[1]
    if state.shape == SQUARE:
        mask = (np.abs(dx) <= state.radius) & (np.abs(dy) <= state.radius)
    else:
        mask = dx * dx + dy * dy <= state.radius * state.radius
    return mask.astype(np.uint8) * np.uint8(255)


def random_start(
    arena: PolygonArena, radius: float, speed: float, rng: np.random.Generator, *, shape: str = BALL
) -> BallState:
    """Uniform position in the arena interior (by rejection) and uniform heading."""

    x0, y0, x1, y1 = arena.bounds()
    while True:
        point = (float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))
        if point_in_polygon(point, arena.vertices) and arena.clearance(point) > radius:
            break
    angle = float(rng.uniform(0.0, 2.0 * math.pi))
    return BallState(position=point, velocity=(speed * math.cos(angle), speed * math.sin(angle)), radius=radius, shape=shape)


def gen_bouncing(
    n: int,
    seed: int,
    *,
    length: int = 30,
    resolution: int = 32,
    radius: float = 3.0,
    speed: float = 2.0,
    square_fraction: float = 0.0,
) -> DatasetFile:
    """Bouncing-ball sequences; ``radius`` and ``speed`` are in 32-unit arena space."""

    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if length < 1 or resolution < 4:
        raise DomainError("length must be >= 1 and resolution >= 4")
    factor = resolution / ARENA_UNITS
    arena = PolygonArena.default(resolution)
    payload = np.zeros((n, length, 1, resolution, resolution), dtype=np.uint8)
    shapes = np.zeros(n, dtype=np.uint16)
    for index in range(n):
        rng = make_rng(seed, "synth", 1, index)
        shape = SQUARE if rng.random() < square_fraction else BALL
        state = random_start(arena, radius * factor, speed * factor, rng, shape=shape)
        for t, frame_state in enumerate(simulate(state, arena, length)):
            payload[index, t, 0] = render(frame_state, resolution)
        shapes[index] = 1 if shape == SQUARE else 0
    return DatasetFile(kind=FRAMES, payload=payload, labels={"shape": shapes, "split": split_last_fifth(n)})


__all__ = [
    "BALL",
    "DEFAULT_VERTICES",
    "SQUARE",
    "BallState",
    "PolygonArena",
    "check_state",
    "divergence",
    "gen_bouncing",
    "point_in_polygon",
    "random_start",
    "reflect",
    "render",
    "simulate",
    "step_ball",
]
