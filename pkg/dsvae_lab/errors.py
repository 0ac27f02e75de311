"""Structured exceptions raised across dsvae_lab."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence


class DsvaeLabError(ValueError):
    """Base class for every error the CLI reports as a structured failure."""


class ShapeError(DsvaeLabError):
    def __init__(self, message: str, *shapes: Sequence[int]) -> None:
        self.shapes = tuple(tuple(int(dim) for dim in shape) for shape in shapes)
        if self.shapes:
            rendered = " vs ".join(str(list(shape)) for shape in self.shapes)
            message = f"{message}: {rendered}"
        super().__init__(message)


class ConfigError(DsvaeLabError):
    def __init__(self, message: str, *, key: str | None = None, source: str | Path | None = None) -> None:
        self.key = key
        self.source = str(source) if source is not None else None
        parts = [message]
        if key:
            parts.append(f"key={key}")
        if self.source:
            parts.append(f"file={self.source}")
        super().__init__(" | ".join(parts))


class _FileFormatError(DsvaeLabError):
    kind = "file"

    def __init__(self, path: str | Path, reason: str) -> None:
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{self.kind} {self.path}: {reason}")


class CheckpointFormatError(_FileFormatError):
    kind = "checkpoint"


class DatasetFormatError(_FileFormatError):
    kind = "dataset"


class NonFiniteLossError(DsvaeLabError):
    def __init__(self, term: str, value: float, *, iteration: int | None = None) -> None:
        self.term = term
        self.value = value
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"non-finite ELBO term '{term}' = {value!r}{where}")


class DomainError(DsvaeLabError):
    """Argument outside the valid domain of an operation."""


__all__ = [
    "CheckpointFormatError",
    "ConfigError",
    "DatasetFormatError",
    "DomainError",
    "DsvaeLabError",
    "NonFiniteLossError",
    "ShapeError",
]
