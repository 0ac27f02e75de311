"""On-disk sequence dataset container (``DSDATA01``) and batch iteration."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, Sequence, Tuple

import numpy as np

from ..core.rng import make_rng
from ..errors import DatasetFormatError, DomainError, ShapeError

MAGIC = b"DSDATA01"
FRAMES = 0
VECTORS = 1
SPLIT = "split"
TRAIN, TEST = 0, 1


@dataclass
class DatasetFile:
    """B sequences of T frames plus per-sequence label categories.

    ``payload`` is ``uint8`` with shape (B, T, C, H, W) for frame data and
    ``float32`` with shape (B, T, D) for vector data.
    """

    kind: int
    payload: np.ndarray
    labels: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind == FRAMES:
            if self.payload.ndim != 5 or self.payload.dtype != np.uint8:
                raise ShapeError("frame payload must be uint8 (B, T, C, H, W)", self.payload.shape)
        elif self.kind == VECTORS:
            if self.payload.ndim != 3:
                raise ShapeError("vector payload must be (B, T, D)", self.payload.shape)
            self.payload = np.ascontiguousarray(self.payload, dtype=np.float32)
        else:
            raise DomainError(f"unknown dataset kind {self.kind}")
        for name, values in self.labels.items():
            if values.shape != (self.num_sequences,):
                raise ShapeError(f"label block {name!r} must hold one id per sequence", values.shape)
            self.labels[name] = np.asarray(values, dtype=np.uint16)

    @property
    def num_sequences(self) -> int:
        return int(self.payload.shape[0])

    @property
    def length(self) -> int:
        return int(self.payload.shape[1])

    @property
    def frame_shape(self) -> Tuple[int, ...]:
        return tuple(int(dim) for dim in self.payload.shape[2:])

    def sequences(self, indices: Sequence[int] | np.ndarray | None = None) -> np.ndarray:
        """Model-ready float32 values; pixels are mapped to [0, 1]."""

        data = self.payload if indices is None else self.payload[np.asarray(indices, dtype=np.int64)]
        if self.kind == FRAMES:
            return data.astype(np.float32) / np.float32(255.0)
        return data.copy()

    def label(self, name: str) -> np.ndarray:
        if name not in self.labels:
            raise DomainError(f"dataset has no {name!r} labels (available: {sorted(self.labels)})")
        return self.labels[name]

    def subset(self, split: str | None) -> "DatasetFile":
        """Return the ``train`` or ``test`` part; ``None`` returns everything."""

        if split is None:
            return self
        if split not in ("train", "test"):
            raise DomainError(f"unknown split {split!r}")
        if SPLIT not in self.labels:
            return self
        wanted = TRAIN if split == "train" else TEST
        return self.select(np.flatnonzero(self.labels[SPLIT] == wanted))

    def select(self, indices: Sequence[int] | np.ndarray) -> "DatasetFile":
        index = np.asarray(indices, dtype=np.int64)
        if index.size and (index.min() < 0 or index.max() >= self.num_sequences):
            raise DomainError(f"sequence index out of range [0, {self.num_sequences})")
        return DatasetFile(
            kind=self.kind,
            payload=self.payload[index],
            labels={name: values[index] for name, values in self.labels.items()},
        )

    # ------------------------------------------------------------------
    def epoch_order(self, seed: int, epoch: int) -> np.ndarray:
        return make_rng(seed, "data", epoch).permutation(self.num_sequences)

    def batches(self, batch_size: int, *, seed: int, epoch: int) -> Iterator[np.ndarray]:
        """Yield index arrays for one shuffled pass; the last batch may be short."""

        if batch_size < 1:
            raise DomainError(f"batch size must be >= 1, got {batch_size}")
        order = self.epoch_order(seed, epoch)
        for start in range(0, len(order), batch_size):
            yield order[start : start + batch_size]


# ----------------------------------------------------------------------
def encode_dataset(dataset: DatasetFile) -> bytes:
    batch, steps = dataset.payload.shape[:2]
    dims = dataset.frame_shape
    chunks = [MAGIC, struct.pack("<BII", dataset.kind, batch, steps), struct.pack(f"<{len(dims)}I", *dims)]
    if dataset.kind == FRAMES:
        chunks.append(np.ascontiguousarray(dataset.payload).tobytes())
    else:
        chunks.append(np.ascontiguousarray(dataset.payload, dtype="<f4").tobytes())
    chunks.append(struct.pack("<I", len(dataset.labels)))
    for name, values in dataset.labels.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(np.ascontiguousarray(values, dtype="<u2").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload: bytes, path: str | Path) -> None:
        self.payload = payload
        self.path = path
        self.offset = 0

    def take(self, count: int) -> bytes:
        end = self.offset + count
        if end > len(self.payload):
            raise DatasetFormatError(self.path, f"truncated at byte {self.offset}")
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> Tuple[int, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_dataset(payload: bytes, path: str | Path = "<memory>") -> DatasetFile:
    reader = _Reader(payload, path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise DatasetFormatError(path, "bad magic")
    kind, batch, steps = reader.unpack("<BII")
    if kind == FRAMES:
        dims = reader.unpack("<3I")
        count = batch * steps * int(np.prod(dims))
        data = np.frombuffer(reader.take(count), dtype=np.uint8).reshape(batch, steps, *dims).copy()
    elif kind == VECTORS:
        dims = reader.unpack("<I")
        count = batch * steps * dims[0]
        data = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(batch, steps, *dims).astype(np.float32)
    else:
        raise DatasetFormatError(path, f"unknown kind {kind}")
    (categories,) = reader.unpack("<I")
    labels: Dict[str, np.ndarray] = {}
    for _ in range(categories):
        (length,) = reader.unpack("<H")
        try:
            name = reader.take(length).decode("utf-8")
        except UnicodeDecodeError:
            raise DatasetFormatError(path, "label name is not UTF-8") from None
        labels[name] = np.frombuffer(reader.take(2 * batch), dtype="<u2").astype(np.uint16)
    if reader.offset != len(payload):
        raise DatasetFormatError(path, f"{len(payload) - reader.offset} trailing bytes")
    return DatasetFile(kind=kind, payload=data, labels=labels)


def save_dataset(dataset: DatasetFile, path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_suffix(target.suffix + ".tmp")
    tmp.write_bytes(encode_dataset(dataset))
    tmp.replace(target)
    return target


def load_dataset(path: str | Path) -> DatasetFile:
    source = Path(path)
    if not source.exists():
        raise DatasetFormatError(source, "file not found")
    return decode_dataset(source.read_bytes(), source)


def split_last_fifth(count: int) -> np.ndarray:
    """Split labels with the last fifth of the sequences held out for test."""

    split = np.zeros(count, dtype=np.uint16)
    split[count - count // 5 :] = TEST
    return split


__all__ = [
    "FRAMES",
    "MAGIC",
    "SPLIT",
    "TEST",
    "TRAIN",
    "VECTORS",
    "DatasetFile",
    "decode_dataset",
    "encode_dataset",
    "load_dataset",
    "save_dataset",
    "split_last_fifth",
]
