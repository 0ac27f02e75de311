"""Deterministic-dynamics baselines with a single global latent.

LSTM-f: h_0 = z, h_t = LSTM(h_{t-1}) with no per-step input.
LSTM-c: h_0 = 0, h_t = LSTM(h_{t-1}, z) with z fed at every step.
Both decode x_t from concat(h_t, f).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from ..core.layers import BiLstm, GaussianHead, GaussianParams, LstmCell, LstmState, Module
from ..core.tensor import Tensor
from ..errors import ConfigError
from .dsvae import FeatureNet, FrameDecoder, ModelDims, _draw, decode_steps
from .likelihoods import build_head

LSTM_F = "lstm-f"
LSTM_C = "lstm-c"


@dataclass
class GlobalLatents:
    f: Tensor
    f_params: GaussianParams
    z: Tensor
    z_params: GaussianParams


class GlobalEncoder(Module):
    """q(f | x_{1:T}) and q(z | x_{1:T}), each a bi-LSTM summary plus Gaussian head."""

    def __init__(self, dims: ModelDims) -> None:
        self.dims = dims
        self.feature_net = FeatureNet(dims)
        self.f_bilstm = BiLstm(dims.feature_dim, dims.hidden)
        self.f_head = GaussianHead(self.f_bilstm.output_size, dims.dim_f)
        self.z_bilstm = BiLstm(dims.feature_dim, dims.hidden)
        self.z_head = GaussianHead(self.z_bilstm.output_size, dims.dim_z)

    def encode(self, x: Tensor, rng: np.random.Generator | None, *, sample: bool = True) -> GlobalLatents:
        features = self.feature_net.per_step(x)
        _, f_summary = self.f_bilstm(features)
        _, z_summary = self.z_bilstm(features)
        f_params = self.f_head(f_summary)
        z_params = self.z_head(z_summary)
        return GlobalLatents(
            f=_draw(f_params, rng, sample),
            f_params=f_params,
            z=_draw(z_params, rng, sample),
            z_params=z_params,
        )


class DeterministicBaseline(Module):
    def __init__(self, dims: ModelDims, variant: str) -> None:
        if variant not in (LSTM_F, LSTM_C):
            raise ConfigError(f"unknown baseline variant {variant!r}", key="model.variant")
        self.variant = variant
        self.dims = dims
        self.head = build_head(dims.likelihood, mixture_components=dims.mixture_components)
        if variant == LSTM_F:
            self.unroller = LstmCell(0, dims.dim_z)
        else:
            self.unroller = LstmCell(dims.dim_z, dims.hidden)
        self.decoder = FrameDecoder(self.unroller.hidden_size, dims, self.head)

    def prior_f(self, batch: int, *, like: Tensor | None = None) -> GaussianParams:
        return GaussianParams.standard(batch, self.dims.dim_f, like=like)

    def prior_z(self, batch: int, *, like: Tensor | None = None) -> GaussianParams:
        return GaussianParams.standard(batch, self.dims.dim_z, like=like)

    def baseline_rollout(self, z: Tensor, f: Tensor, steps: int) -> List[Tensor]:
        """Deterministic decoder inputs h_{1:T} given the global latents."""

        batch = z.shape[0]
        if self.variant == LSTM_F:
            zeros = np.zeros((batch, self.unroller.hidden_size))
            state = LstmState(h=z, c=Tensor(zeros, dtype=z.dtype))
            step_input = None
        else:
            state = self.unroller.initial_state(batch, like=z)
            step_input = z
        outputs: List[Tensor] = []
        for _ in range(steps):
            state = self.unroller.step(step_input, state)
            outputs.append(state.h)
        return outputs

    def decode(self, h_t: Tensor, f: Tensor) -> Tensor:
        return self.decoder(h_t, f)

    def decode_sequence(self, h: List[Tensor], f: Tensor) -> Tensor:
        return decode_steps(self.decoder, h, f)

    def log_likelihood(self, params: Tensor, x_t: Tensor) -> Tensor:
        return self.head.log_likelihood(params, x_t)


def baseline_rollout(baseline: DeterministicBaseline, z: Tensor, f: Tensor, steps: int) -> List[Tensor]:
    return baseline.baseline_rollout(z, f, steps)


__all__ = [
    "DeterministicBaseline",
    "GlobalEncoder",
    "GlobalLatents",
    "LSTM_C",
    "LSTM_F",
    "baseline_rollout",
]
