"""Adam optimiser and gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from ..errors import DomainError, ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def ensure(self, name: str, shape: Tuple[int, ...], dtype) -> Tuple[np.ndarray, np.ndarray]:
        if name not in self.first_moment:
            self.first_moment[name] = np.zeros(shape, dtype=dtype)
            self.second_moment[name] = np.zeros(shape, dtype=dtype)
        m, v = self.first_moment[name], self.second_moment[name]
        if m.shape != shape:
            raise ShapeError(f"moment buffer for {name} does not match parameter", m.shape, shape)
        return m, v


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
) -> None:
    """Apply one bias-corrected Adam update in place."""

    if state.step < 0:
        raise DomainError(f"Adam step count must be >= 0, got {state.step}")
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError(f"gradient for {name} does not match parameter", grad.shape, param.shape)
        m, v = state.ensure(name, param.shape, param.dtype)
        dtype = param.dtype.type
        m *= dtype(state.beta1)
        m += dtype(1.0 - state.beta1) * grad
        v *= dtype(state.beta2)
        v += dtype(1.0 - state.beta2) * grad * grad
        if state.lr == 0:
            continue
        m_hat = m / dtype(correction1)
        v_hat = v / dtype(correction2)
        param.data -= dtype(state.lr) * m_hat / (np.sqrt(v_hat) + dtype(state.eps))


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``."""

    total = 0.0
    for param in params:
        if param.grad is not None:
            total += float(np.sum(np.square(param.grad, dtype=np.float64)))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / (norm + 1e-6)
        for param in params:
            if param.grad is not None:
                param.grad = (param.grad * factor).astype(param.dtype)
    return norm


class Adam:
    """Adam over a named parameter mapping."""

    def __init__(self, params: Mapping[str, Tensor], state: AdamState | None = None, *, clip_norm: float = 5.0) -> None:
        self.params = dict(params)
        self.state = state or AdamState()
        self.clip_norm = clip_norm

    def zero_grads(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def step(self) -> float:
        norm = clip_grad_norm(list(self.params.values()), self.clip_norm)
        adam_step(self.params, {name: p.grad for name, p in self.params.items()}, self.state)
        return norm


__all__ = ["Adam", "AdamState", "adam_step", "clip_grad_norm"]
