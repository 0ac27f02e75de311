"""Samples process and host resource usage during long runs."""

from __future__ import annotations

import os
import time
from typing import Any, Dict

try:  # pragma: no cover - optional dependency
    import psutil  # type: ignore
except Exception:  # pragma: no cover - psutil may be unavailable
    psutil = None


class SystemMonitor:
    def __init__(self, *, interval_iterations: int, metrics, logger) -> None:
        self.interval_iterations = max(1, interval_iterations)
        self.metrics = metrics
        self.logger = logger
        self._process = psutil.Process(os.getpid()) if psutil else None

    def maybe_sample(self, iteration: int) -> None:
        if iteration % self.interval_iterations:
            return
        try:
            stats = self.collect_stats()
        except Exception as exc:  # pragma: no cover - platform specific
            self.logger.debug("System monitor failed: %s", exc)
            return
        if stats:
            stats["iteration"] = iteration
            self.metrics.record_system_stats(stats)

    def collect_stats(self) -> Dict[str, Any]:
        stats: Dict[str, Any] = {}
        if psutil is None:
            return stats
        stats["timestamp"] = round(time.time(), 3)
        stats["cpu_percent"] = psutil.cpu_percent(interval=None)
        memory = psutil.virtual_memory()
        stats["memory_percent"] = memory.percent
        if self._process is not None:
            stats["rss_mb"] = round(self._process.memory_info().rss / (1024 * 1024), 2)
        return stats


__all__ = ["SystemMonitor"]
