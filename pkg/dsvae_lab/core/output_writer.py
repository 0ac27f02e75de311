"""Atomic writers for run artifacts: PGM frames, CSV tables, hashes."""

from __future__ import annotations

import csv
import hashlib
import io
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

from ..errors import DatasetFormatError, ShapeError


def frame_to_u8(frame: np.ndarray) -> np.ndarray:
    """Map intensities in [0, 1] to 8-bit grey levels; values outside are clipped."""

    return np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_pgm(frame: np.ndarray) -> bytes:
    pixels = np.asarray(frame)
    if pixels.ndim == 3 and pixels.shape[0] == 1:
        pixels = pixels[0]
    if pixels.ndim != 2:
        raise ShapeError("PGM frames must be single-channel 2-d", pixels.shape)
    if pixels.dtype != np.uint8:
        pixels = frame_to_u8(pixels)
    height, width = pixels.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()


def decode_pgm(payload: bytes, path: str | Path = "<memory>") -> np.ndarray:
    parts = payload.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise DatasetFormatError(path, "not a binary PGM (P5, maxval 255)")
    width, height = (int(value) for value in parts[1].split())
    body = parts[3]
    if len(body) != width * height:
        raise DatasetFormatError(path, "truncated PGM payload")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width)


def latent_hash(latent: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(latent, dtype="<f4").tobytes()).hexdigest()


class OutputWriter:
    """Writes artifacts into one run directory, each via temp file + replace."""

    def __init__(self, output_dir: str | Path, *, logger) -> None:
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.logger = logger

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def write_bytes(self, name: str, payload: bytes) -> Path:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_suffix(target.suffix + ".tmp")
        tmp.write_bytes(payload)
        tmp.replace(target)
        return target

    def write_pgm(self, name: str, frame: np.ndarray) -> Path:
        return self.write_bytes(name, encode_pgm(frame))

    def write_sequence(self, sequence: np.ndarray, *, seq_index: int, subdir: str = "") -> List[Path]:
        """Write frames as ``seq{idx}_t{t:02d}.pgm``."""

        prefix = f"{subdir}/" if subdir else ""
        return [
            self.write_pgm(f"{prefix}seq{seq_index}_t{t:02d}.pgm", frame) for t, frame in enumerate(sequence)
        ]

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(value)) if isinstance(value, (float, np.floating)) else value for value in row])
        target = self.write_bytes(name, buffer.getvalue().encode("utf-8"))
        self.logger.debug("Wrote %s", target)
        return target


__all__ = ["OutputWriter", "decode_pgm", "encode_pgm", "frame_to_u8", "latent_hash"]
