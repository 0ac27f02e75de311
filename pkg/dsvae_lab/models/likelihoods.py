"""Observation likelihoods p(x_t | z_t, f) over decoder outputs."""

from __future__ import annotations

import math
from typing import Dict, Tuple, Type

import numpy as np

from ..core.layers import LOGVAR_MAX, LOGVAR_MIN
from ..core.tensor import Tensor, clamp, exp, log_softmax, log_sum_exp, sigmoid, softplus, square
from ..errors import ConfigError, DomainError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)


def _per_frame_sum(values: Tensor) -> Tensor:
    return values.reshape(values.shape[0], -1).sum(axis=1)


def _split_channels(params: Tensor, parts: int) -> Tuple[Tensor, ...]:
    width = params.shape[1] // parts
    return tuple(params[:, i * width : (i + 1) * width] for i in range(parts))


class LikelihoodHead:
    """Base class: decoder emits ``param_multiplier`` values per observed value."""

    name = "base"
    param_multiplier = 1
    value_range: Tuple[float, float] | None = None

    def param_shape(self, frame_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        return (frame_shape[0] * self.param_multiplier, *frame_shape[1:])

    def check(self, params: Tensor, x: Tensor) -> None:
        expected = self.param_shape(tuple(x.shape[1:]))
        if tuple(params.shape[1:]) != expected or params.shape[0] != x.shape[0]:
            raise ShapeError(f"{self.name}: parameters do not match frames", params.shape, x.shape)

    def log_likelihood(self, params: Tensor, x: Tensor) -> Tensor:
        raise NotImplementedError

    def mean(self, params: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, params: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


class FixedL2(LikelihoodHead):
    """Unit-variance Gaussian with the constant dropped: -1/2 ||x - mu||^2."""

    name = "fixed_l2"

    def log_likelihood(self, params: Tensor, x: Tensor) -> Tensor:
        self.check(params, x)
        return _per_frame_sum(square(x - params)) * -0.5

    def mean(self, params: np.ndarray) -> np.ndarray:
        return params.copy()

    def sample(self, params: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return params + rng.standard_normal(params.shape).astype(params.dtype)


class DiagGaussian(LikelihoodHead):
    name = "diag_gaussian"
    param_multiplier = 2

    def log_likelihood(self, params: Tensor, x: Tensor) -> Tensor:
        self.check(params, x)
        mean, logvar = _split_channels(params, 2)
        logvar = clamp(logvar, LOGVAR_MIN, LOGVAR_MAX)
        terms = logvar + square(x - mean) * exp(-logvar) + LOG_2PI
        return _per_frame_sum(terms) * -0.5

    def mean(self, params: np.ndarray) -> np.ndarray:
        return params[:, : params.shape[1] // 2].copy()

    def sample(self, params: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        half = params.shape[1] // 2
        mean = params[:, :half]
        std = np.exp(0.5 * np.clip(params[:, half:], LOGVAR_MIN, LOGVAR_MAX))
        return mean + std * rng.standard_normal(mean.shape).astype(params.dtype)


class Bernoulli(LikelihoodHead):
    """Decoder emits logits; log p = -(x softplus(-l) + (1 - x) softplus(l))."""

    name = "bernoulli"
    value_range = (0.0, 1.0)

    def log_likelihood(self, params: Tensor, x: Tensor) -> Tensor:
        self.check(params, x)
        if x.size and (x.data.min() < 0.0 or x.data.max() > 1.0):
            raise DomainError("bernoulli targets must lie in [0, 1]")
        terms = x * softplus(-params) + (1.0 - x) * softplus(params)
        return _per_frame_sum(terms) * -1.0

    def mean(self, params: np.ndarray) -> np.ndarray:
        return sigmoid(Tensor(params, dtype=params.dtype)).data

    def sample(self, params: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        probs = self.mean(params)
        return (rng.random(probs.shape) < probs).astype(params.dtype)


class StrokeMixture(LikelihoodHead):
    """K bivariate diagonal Gaussians over (dx, dy) plus a 3-way pen state.

    Decoder output per point: K mixture logits, K mu_x, K mu_y, K logvar_x,
    K logvar_y, 3 pen logits.
    """

    name = "stroke_mixture"
    point_size = 5

    def __init__(self, components: int = 10) -> None:
        if components < 1:
            raise ConfigError("stroke mixture needs at least one component", key="model.mixture_components")
        self.components = components

    def param_shape(self, frame_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        if tuple(frame_shape) != (self.point_size,):
            raise ShapeError("stroke_mixture expects 5-d stroke points", frame_shape)
        return (5 * self.components + 3,)

    def split(self, params: Tensor) -> Dict[str, Tensor]:
        k = self.components
        return {
            "logits": params[:, 0:k],
            "mu_x": params[:, k : 2 * k],
            "mu_y": params[:, 2 * k : 3 * k],
            "logvar_x": clamp(params[:, 3 * k : 4 * k], LOGVAR_MIN, LOGVAR_MAX),
            "logvar_y": clamp(params[:, 4 * k : 5 * k], LOGVAR_MIN, LOGVAR_MAX),
            "pen": params[:, 5 * k : 5 * k + 3],
        }

    @staticmethod
    def check_pen(points: np.ndarray) -> None:
        pen = points[:, 2:5]
        if not (np.all((pen == 0) | (pen == 1)) and np.all(pen.sum(axis=1) == 1)):
            raise DomainError("stroke pen state must be one-hot over (p1, p2, p3)")

    def log_likelihood(self, params: Tensor, x: Tensor) -> Tensor:
        self.check(params, x)
        self.check_pen(x.data)
        parts = self.split(params)
        dx = x[:, 0:1]
        dy = x[:, 1:2]
        log_weights = log_softmax(parts["logits"], axis=1)
        quad = square(dx - parts["mu_x"]) * exp(-parts["logvar_x"]) + square(dy - parts["mu_y"]) * exp(
            -parts["logvar_y"]
        )
        log_components = log_weights - LOG_2PI - (parts["logvar_x"] + parts["logvar_y"] + quad) * 0.5
        offsets = log_sum_exp(log_components, axis=1)
        pen = (x[:, 2:5] * log_softmax(parts["pen"], axis=1)).sum(axis=1)
        return offsets + pen

    def mixture_weights(self, params: np.ndarray) -> np.ndarray:
        logits = params[:, : self.components].astype(np.float64)
        logits -= logits.max(axis=1, keepdims=True)
        weights = np.exp(logits)
        return weights / weights.sum(axis=1, keepdims=True)

    def mean(self, params: np.ndarray) -> np.ndarray:
        k = self.components
        weights = self.mixture_weights(params)
        out = np.zeros((params.shape[0], self.point_size), dtype=params.dtype)
        out[:, 0] = np.sum(weights * params[:, k : 2 * k], axis=1)
        out[:, 1] = np.sum(weights * params[:, 2 * k : 3 * k], axis=1)
        pen = np.argmax(params[:, 5 * k : 5 * k + 3], axis=1)
        out[np.arange(params.shape[0]), 2 + pen] = 1.0
        return out

    def sample(self, params: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        k = self.components
        weights = self.mixture_weights(params)
        out = np.zeros((params.shape[0], self.point_size), dtype=params.dtype)
        pen_logits = params[:, 5 * k : 5 * k + 3].astype(np.float64)
        pen_probs = np.exp(pen_logits - pen_logits.max(axis=1, keepdims=True))
        pen_probs /= pen_probs.sum(axis=1, keepdims=True)
        for row in range(params.shape[0]):
            comp = rng.choice(k, p=weights[row])
            for axis, offset in ((0, k), (1, 2 * k)):
                logvar = np.clip(params[row, offset + 2 * k + comp], LOGVAR_MIN, LOGVAR_MAX)
                out[row, axis] = params[row, offset + comp] + np.exp(0.5 * logvar) * rng.standard_normal()
            out[row, 2 + rng.choice(3, p=pen_probs[row])] = 1.0
        return out


HEADS: Dict[str, Type[LikelihoodHead]] = {
    FixedL2.name: FixedL2,
    DiagGaussian.name: DiagGaussian,
    Bernoulli.name: Bernoulli,
    StrokeMixture.name: StrokeMixture,
}


def build_head(name: str, *, mixture_components: int = 10) -> LikelihoodHead:
    if name not in HEADS:
        raise ConfigError(f"unknown likelihood {name!r}; expected one of {sorted(HEADS)}", key="model.likelihood")
    if name == StrokeMixture.name:
        return StrokeMixture(mixture_components)
    return HEADS[name]()


def log_likelihood(head: LikelihoodHead, params: Tensor, x: Tensor) -> Tensor:
    return head.log_likelihood(params, x)


__all__ = [
    "Bernoulli",
    "DiagGaussian",
    "FixedL2",
    "HEADS",
    "LikelihoodHead",
    "StrokeMixture",
    "build_head",
    "log_likelihood",
]
