"""Binary checkpoint persistence for parameters and optimiser state."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Tuple

import numpy as np

from ..errors import CheckpointFormatError, ShapeError
from .optim import AdamState

MAGIC = b"DSVAE001"
FIRST_MOMENT = "m:"
SECOND_MOMENT = "v:"


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    moments: Dict[str, np.ndarray] = field(default_factory=dict)
    iteration: int = 0
    seed: int = 0

    @classmethod
    def from_training(
        cls,
        params: Mapping[str, np.ndarray],
        optimizer: AdamState | None,
        *,
        iteration: int,
        seed: int,
    ) -> "Checkpoint":
        moments: Dict[str, np.ndarray] = {}
        if optimizer is not None:
            for name in params:
                if name in optimizer.first_moment:
                    moments[FIRST_MOMENT + name] = optimizer.first_moment[name]
                    moments[SECOND_MOMENT + name] = optimizer.second_moment[name]
        return cls(params=dict(params), moments=moments, iteration=iteration, seed=seed)

    def restore_optimizer(self, state: AdamState) -> AdamState:
        state.first_moment = {}
        state.second_moment = {}
        for key, value in self.moments.items():
            if key.startswith(FIRST_MOMENT):
                state.first_moment[key[len(FIRST_MOMENT) :]] = value.copy()
            elif key.startswith(SECOND_MOMENT):
                state.second_moment[key[len(SECOND_MOMENT) :]] = value.copy()
        state.step = self.iteration
        return state

    def check_against(self, expected: Mapping[str, Tuple[int, ...]], path: str | Path = "<memory>") -> None:
        """Reject checkpoints whose tensors do not match the model's parameter shapes."""

        missing = sorted(set(expected) - set(self.params))
        unexpected = sorted(set(self.params) - set(expected))
        if missing or unexpected:
            raise CheckpointFormatError(path, f"parameter names differ (missing={missing}, unexpected={unexpected})")
        for name, shape in expected.items():
            if self.params[name].shape != tuple(shape):
                raise CheckpointFormatError(
                    path, str(ShapeError(f"shape mismatch for {name}", tuple(shape), self.params[name].shape))
                )


# ----------------------------------------------------------------------
def _encode_block(tensors: Mapping[str, np.ndarray]) -> bytes:
    chunks = [struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        encoded = name.encode("utf-8")
        array = np.ascontiguousarray(value, dtype="<f4")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(array.tobytes())
    return b"".join(chunks)


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    return b"".join(
        (
            MAGIC,
            _encode_block(checkpoint.params),
            _encode_block(checkpoint.moments),
            struct.pack("<QQ", checkpoint.iteration, checkpoint.seed),
        )
    )


class _Reader:
    def __init__(self, payload: bytes, path: str | Path) -> None:
        self.payload = payload
        self.path = path
        self.offset = 0

    def take(self, count: int) -> bytes:
        end = self.offset + count
        if end > len(self.payload):
            raise CheckpointFormatError(self.path, f"truncated at byte {self.offset}")
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> Tuple[int, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def block(self) -> Dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        tensors: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (length,) = self.unpack("<H")
            try:
                name = self.take(length).decode("utf-8")
            except UnicodeDecodeError:
                raise CheckpointFormatError(self.path, "tensor name is not UTF-8") from None
            (rank,) = self.unpack("<B")
            shape = self.unpack(f"<{rank}I")
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(self.take(4 * size), dtype="<f4").reshape(shape)
            tensors[name] = data.astype(np.float32)
        return tensors


def decode_checkpoint(payload: bytes, path: str | Path = "<memory>") -> Checkpoint:
    reader = _Reader(payload, path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError(path, "bad magic")
    params = reader.block()
    moments = reader.block()
    iteration, seed = reader.unpack("<QQ")
    if reader.offset != len(payload):
        raise CheckpointFormatError(path, f"{len(payload) - reader.offset} trailing bytes")
    return Checkpoint(params=params, moments=moments, iteration=iteration, seed=seed)


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_suffix(target.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(checkpoint))
    tmp.replace(target)
    return target


def load_checkpoint(path: str | Path, *, expected: Mapping[str, Tuple[int, ...]] | None = None) -> Checkpoint:
    source = Path(path)
    if not source.exists():
        raise CheckpointFormatError(source, "file not found")
    checkpoint = decode_checkpoint(source.read_bytes(), source)
    if expected is not None:
        checkpoint.check_against(expected, source)
    return checkpoint


# ----------------------------------------------------------------------
class CheckpointManager:
    """Writes the training checkpoint every ``interval_iterations`` and on demand."""

    def __init__(self, path: str | Path, *, interval_iterations: int, seed: int, logger, start_iteration: int = 0) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.interval_iterations = interval_iterations
        self.seed = seed
        self.logger = logger
        self._last_iteration = start_iteration

    def due(self, iteration: int) -> bool:
        return self.interval_iterations > 0 and iteration - self._last_iteration >= self.interval_iterations

    def maybe_checkpoint(self, params: Mapping[str, np.ndarray], optimizer: AdamState, iteration: int) -> bool:
        if not self.due(iteration):
            return False
        self.force_checkpoint(params, optimizer, iteration)
        return True

    def force_checkpoint(self, params: Mapping[str, np.ndarray], optimizer: AdamState, iteration: int) -> Path:
        checkpoint = Checkpoint.from_training(params, optimizer, iteration=iteration, seed=self.seed)
        save_checkpoint(checkpoint, self.path)
        self._last_iteration = iteration
        self.logger.debug("Checkpoint written to %s (iteration %d)", self.path, iteration)
        return self.path


__all__ = [
    "Checkpoint",
    "CheckpointManager",
    "decode_checkpoint",
    "encode_checkpoint",
    "load_checkpoint",
    "save_checkpoint",
]
