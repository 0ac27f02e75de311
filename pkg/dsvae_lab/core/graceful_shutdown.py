"""Signal-aware stop flag for the training loop."""

from __future__ import annotations

import signal
import threading
from typing import Iterable


class GracefulShutdown:
    def __init__(self) -> None:
        self._event = threading.Event()
        self._previous: dict[int, object] = {}

    def install(self, signals: Iterable[int] | None = None) -> None:
        if threading.current_thread() is not threading.main_thread():
            return
        targets = list(signals) if signals is not None else [signal.SIGINT, signal.SIGTERM]
        for sig in targets:
            try:
                self._previous[sig] = signal.signal(sig, lambda *_: self.trigger())
            except (ValueError, OSError):  # pragma: no cover - platform specific
                continue

    def uninstall(self) -> None:
        for sig, handler in self._previous.items():
            signal.signal(sig, handler)
        self._previous.clear()

    def trigger(self) -> None:
        self._event.set()

    def is_triggered(self) -> bool:
        return self._event.is_set()


__all__ = ["GracefulShutdown"]
