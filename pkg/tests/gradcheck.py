"""Central-difference gradient checks in float64."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from dsvae_lab.core.tensor import Tensor


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, entries, eps: float = 1e-6) -> np.ndarray:
    out = np.zeros(len(entries))
    flat = param.data.reshape(-1)
    for k, index in enumerate(entries):
        original = flat[index]
        flat[index] = original + eps
        up = fn().item()
        flat[index] = original - eps
        down = fn().item()
        flat[index] = original
        out[k] = (up - down) / (2.0 * eps)
    return out


def max_relative_error(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    *,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Largest ||analytic - numeric|| / (||analytic|| + ||numeric||) over the given tensors."""

    for param in params.values():
        param.grad = None
    fn().backward()
    chooser = np.random.default_rng(seed)
    worst = 0.0
    for name, param in params.items():
        size = param.size
        if max_entries is None or size <= max_entries:
            entries = np.arange(size)
        else:
            entries = chooser.choice(size, max_entries, replace=False)
        analytic = (param.grad if param.grad is not None else np.zeros(param.shape)).reshape(-1)[entries]
        numeric = numeric_grad(fn, param, entries)
        scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
        if scale < 1e-12:
            continue
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / scale))
    return worst
