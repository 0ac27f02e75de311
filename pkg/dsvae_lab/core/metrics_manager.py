"""Aggregates training metrics and writes the CSV log and run summaries."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping

METRICS_HEADER = ("iteration", "beta", "recon", "kl_f", "kl_z", "elbo")


@dataclass
class MetricSnapshot:
    iteration: int
    beta: float
    recon: float
    kl_f: float
    kl_z: float
    elbo: float

    def row(self) -> List[str]:
        return [str(self.iteration)] + [repr(float(value)) for value in (self.beta, self.recon, self.kl_f, self.kl_z, self.elbo)]


class MetricsManager:
    def __init__(
        self,
        metrics_dir: str | Path,
        *,
        flush_every: int,
        include_system: bool,
        logger,
        start_iteration: int = 0,
    ) -> None:
        self.metrics_dir = Path(metrics_dir)
        self.metrics_dir.mkdir(parents=True, exist_ok=True)
        self.metrics_path = self.metrics_dir / "metrics.csv"
        self.system_path = self.metrics_dir / "system.jsonl"
        self.flush_every = max(1, flush_every)
        self.include_system = include_system
        self.logger = logger
        self._pending: List[MetricSnapshot] = []
        self._last: MetricSnapshot | None = None
        self._first: MetricSnapshot | None = None
        self._count = 0
        self._started = time.monotonic()
        self._prepare(start_iteration)

    # ------------------------------------------------------------------
    def _prepare(self, start_iteration: int) -> None:
        kept: List[List[str]] = []
        if start_iteration > 0 and self.metrics_path.exists():
            with self.metrics_path.open("r", encoding="utf-8", newline="") as handle:
                rows = list(csv.reader(handle))
            kept = [row for row in rows[1:] if row and int(row[0]) < start_iteration]
        with self.metrics_path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(METRICS_HEADER)
            writer.writerows(kept)

    # ------------------------------------------------------------------
    def record(self, snapshot: MetricSnapshot) -> None:
        self._pending.append(snapshot)
        self._count += 1
        if self._first is None:
            self._first = snapshot
        self._last = snapshot
        if len(self._pending) >= self.flush_every:
            self.flush()

    def record_system_stats(self, stats: Mapping[str, Any]) -> None:
        if not self.include_system or not stats:
            return
        with self.system_path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(dict(stats), ensure_ascii=False, sort_keys=True) + "\n")

    def flush(self) -> None:
        if not self._pending:
            return
        with self.metrics_path.open("a", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerows(snapshot.row() for snapshot in self._pending)
        last = self._pending[-1]
        self._pending.clear()
        self.logger.info(
            "it=%d beta=%.4f recon=%.4f kl_f=%.4f kl_z=%.4f elbo=%.4f",
            last.iteration,
            last.beta,
            last.recon,
            last.kl_f,
            last.kl_z,
            last.elbo,
            extra={"iteration": last.iteration},
        )

    # ------------------------------------------------------------------
    def summary(self) -> Dict[str, Any]:
        return {
            "iterations_recorded": self._count,
            "first": asdict(self._first) if self._first else None,
            "last": asdict(self._last) if self._last else None,
            "wall_seconds": round(time.monotonic() - self._started, 3),
        }

    def write_summary(self, path: str | Path | None = None, *, extra: Mapping[str, Any] | None = None) -> Path:
        self.flush()
        target = Path(path) if path else self.metrics_dir / "summary.json"
        payload = self.summary()
        payload.update(extra or {})
        target.write_text(json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")
        self.logger.info("Run summary written to %s", target)
        return target


__all__ = ["METRICS_HEADER", "MetricSnapshot", "MetricsManager"]
