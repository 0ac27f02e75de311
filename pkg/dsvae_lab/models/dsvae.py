"""Disentangled sequential VAE: generative model and both inference networks.

Generative model::

    f ~ N(0, I)
    z_t ~ p(z_t | z_<t)   Gaussian from an LSTM over z_{t-1}, z_0 = 0
    x_t ~ p(x_t | z_t, f) decoder over concat(z_t, f)

The factorised encoder uses q(f | x_{1:T}) q(z_t | x_t); the full encoder
uses q(f | x_{1:T}) q(z_{1:T} | f, x_{1:T}) with a bi-LSTM over [x_t, f]
followed by a plain RNN.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from ..core.layers import (
    MLP,
    BiLstm,
    ConvEncoder,
    DeconvDecoder,
    GaussianHead,
    GaussianParams,
    Linear,
    LstmCell,
    LstmState,
    Module,
    RnnCell,
    sample_gaussian,
)
from ..core.tensor import Tensor, concat, stack, tanh
from ..errors import ShapeError
from .likelihoods import LikelihoodHead, build_head


@dataclass(frozen=True)
class ModelDims:
    frame_shape: Tuple[int, ...]
    dim_f: int = 32
    dim_z: int = 8
    hidden: int = 64
    feature_dim: int = 64
    channels: int = 32
    conv_layers: int = 3
    likelihood: str = "bernoulli"
    mixture_components: int = 10

    @property
    def is_image(self) -> bool:
        return len(self.frame_shape) == 3

    def __post_init__(self) -> None:
        if len(self.frame_shape) not in (1, 3):
            raise ShapeError("frames must be (C, H, W) images or (D,) vectors", self.frame_shape)
        if self.is_image and self.frame_shape[1] != self.frame_shape[2]:
            raise ShapeError("image frames must be square", self.frame_shape)


@dataclass
class LatentSample:
    """One f sample and T z_t samples with their posterior parameters."""

    f: Tensor
    f_params: GaussianParams
    z: List[Tensor]
    z_params: List[GaussianParams]
    prior_params: List[GaussianParams] = field(default_factory=list)
    kl_f: Tensor | None = None
    kl_z: Tensor | None = None

    @property
    def length(self) -> int:
        return len(self.z)


@dataclass
class PriorRollout:
    z: List[Tensor]
    params: List[GaussianParams]
    state: LstmState | None = None


def _draw(params: GaussianParams, rng: np.random.Generator | None, sample: bool) -> Tensor:
    if not sample:
        return params.mean
    if rng is None:
        raise ValueError("sampling requires an rng")
    return sample_gaussian(params, rng)


# ----------------------------------------------------------------------
class FeatureNet(Module):
    """Per-frame feature extractor: conv stack for images, one-hidden-layer MLP for vectors."""

    def __init__(self, dims: ModelDims) -> None:
        self.frame_shape = tuple(dims.frame_shape)
        if dims.is_image:
            channels, size, _ = dims.frame_shape
            self.net = ConvEncoder(channels, size, dims.channels, dims.conv_layers, dims.feature_dim)
        else:
            self.net = MLP([dims.frame_shape[0], dims.hidden, dims.feature_dim])

    def __call__(self, frames: Tensor) -> Tensor:
        if isinstance(self.net, MLP):
            return self.net(frames, final_activation=True)
        return self.net(frames)

    def per_step(self, x: Tensor) -> List[Tensor]:
        """Features for (B, T, *frame) as a list of T tensors of shape (B, F)."""

        if x.ndim < 2 or tuple(x.shape[2:]) != self.frame_shape:
            raise ShapeError("sequence batch does not match frame shape", x.shape, self.frame_shape)
        batch, steps = x.shape[:2]
        if steps == 0:
            raise ShapeError("empty sequence", x.shape)
        features = self(x.reshape(batch * steps, *self.frame_shape))
        features = features.reshape(batch, steps, features.shape[1])
        return [features[:, t] for t in range(steps)]


class FrameDecoder(Module):
    """Maps concat(latent, f) to likelihood parameters for one frame."""

    def __init__(self, latent_dim: int, dims: ModelDims, head: LikelihoodHead) -> None:
        self.latent_dim = latent_dim
        self.dim_f = dims.dim_f
        self.param_shape = head.param_shape(tuple(dims.frame_shape))
        joint = latent_dim + dims.dim_f
        if dims.is_image:
            self.hidden = Linear(joint, dims.hidden)
            self.net = DeconvDecoder(
                dims.hidden, self.param_shape[0], dims.frame_shape[1], dims.channels, dims.conv_layers
            )
        else:
            self.net = MLP([joint, dims.hidden, dims.hidden, self.param_shape[0]])

    def __call__(self, latent: Tensor, f: Tensor) -> Tensor:
        if latent.shape[-1] != self.latent_dim or f.shape[-1] != self.dim_f:
            raise ShapeError("decoder inputs mismatch", latent.shape, f.shape)
        joint = concat([latent, f], axis=1)
        if isinstance(self.net, MLP):
            return self.net(joint)
        return self.net(tanh(self.hidden(joint)))


def decode_steps(decoder: FrameDecoder, latents: Sequence[Tensor], f: Tensor) -> Tensor:
    """Decode every step in one batched call; returns (B, T, *param_shape)."""

    batch, steps = f.shape[0], len(latents)
    latent_flat = stack(list(latents), axis=1).reshape(batch * steps, decoder.latent_dim)
    f_flat = stack([f] * steps, axis=1).reshape(batch * steps, decoder.dim_f)
    params = decoder(latent_flat, f_flat)
    return params.reshape(batch, steps, *params.shape[1:])


class PriorDynamics(Module):
    """p(z_t | z_<t): LSTM over z_{t-1} feeding a Gaussian head."""

    def __init__(self, dims: ModelDims) -> None:
        self.dim_z = dims.dim_z
        self.cell = LstmCell(dims.dim_z, dims.hidden)
        self.head = GaussianHead(dims.hidden, dims.dim_z)

    def step(self, z_prev: Tensor, state: LstmState) -> Tuple[GaussianParams, LstmState]:
        state = self.cell.step(z_prev, state)
        return self.head(state.h), state

    def start(self, batch: int, *, like: Tensor | None = None) -> Tuple[Tensor, LstmState]:
        dtype = like.dtype if like is not None else None
        return Tensor(np.zeros((batch, self.dim_z)), dtype=dtype), self.cell.initial_state(batch, like=like)


# ----------------------------------------------------------------------
class GenerativeModel(Module):
    def __init__(self, dims: ModelDims) -> None:
        self.dims = dims
        self.head = build_head(dims.likelihood, mixture_components=dims.mixture_components)
        self.prior = PriorDynamics(dims)
        self.decoder = FrameDecoder(dims.dim_z, dims, self.head)

    def prior_f(self, batch: int, *, like: Tensor | None = None) -> GaussianParams:
        return GaussianParams.standard(batch, self.dims.dim_f, like=like)

    def sample_f(self, batch: int, rng: np.random.Generator) -> Tensor:
        return sample_gaussian(self.prior_f(batch), rng)

    def prior_along(self, z_path: Sequence[Tensor]) -> Tuple[List[GaussianParams], LstmState]:
        """Prior parameters p(z_t | z_<t) for t = 1..T along a given path."""

        z_prev, state = self.prior.start(z_path[0].shape[0], like=z_path[0])
        params: List[GaussianParams] = []
        for z_t in z_path:
            step_params, state = self.prior.step(z_prev, state)
            params.append(step_params)
            z_prev = z_t
        return params, state

    def prior_rollout(
        self,
        steps: int,
        rng: np.random.Generator | None,
        *,
        batch: int = 1,
        z_init: Sequence[Tensor] | None = None,
        sample: bool = True,
    ) -> PriorRollout:
        """Sample ``steps`` new z_t from the prior, continuing after ``z_init`` if given."""

        if steps < 1:
            raise ShapeError(f"prior rollout needs T >= 1, got {steps}")
        if z_init:
            _, state = self.prior_along(z_init)
            z_prev = z_init[-1]
        else:
            z_prev, state = self.prior.start(batch)
        zs: List[Tensor] = []
        params: List[GaussianParams] = []
        for _ in range(steps):
            step_params, state = self.prior.step(z_prev, state)
            z_prev = _draw(step_params, rng, sample)
            params.append(step_params)
            zs.append(z_prev)
        return PriorRollout(z=zs, params=params, state=state)

    def decode(self, z_t: Tensor, f: Tensor) -> Tensor:
        return self.decoder(z_t, f)

    def decode_sequence(self, z: Sequence[Tensor], f: Tensor) -> Tensor:
        return decode_steps(self.decoder, z, f)

    def log_likelihood(self, params: Tensor, x_t: Tensor) -> Tensor:
        return self.head.log_likelihood(params, x_t)


# ----------------------------------------------------------------------
class SequenceEncoder(Module):
    """Shared q(f | x_{1:T}) path; subclasses define q(z_t | ...)."""

    def __init__(self, dims: ModelDims) -> None:
        self.dims = dims
        self.feature_net = FeatureNet(dims)
        self.f_bilstm = BiLstm(dims.feature_dim, dims.hidden)
        self.f_head = GaussianHead(self.f_bilstm.output_size, dims.dim_f)

    def features(self, x: Tensor) -> List[Tensor]:
        return self.feature_net.per_step(x)

    def f_posterior(self, features: Sequence[Tensor]) -> GaussianParams:
        _, summary = self.f_bilstm(features)
        return self.f_head(summary)

    def z_posteriors(self, features: Sequence[Tensor], f: Tensor) -> List[GaussianParams]:
        raise NotImplementedError

    def encode(self, x: Tensor, rng: np.random.Generator | None, *, sample: bool = True) -> LatentSample:
        features = self.features(x)
        f_params = self.f_posterior(features)
        f = _draw(f_params, rng, sample)
        z_params = self.z_posteriors(features, f)
        z = [_draw(params, rng, sample) for params in z_params]
        return LatentSample(f=f, f_params=f_params, z=z, z_params=z_params)

    def encode_z(
        self, x: Tensor, f: Tensor, rng: np.random.Generator | None, *, sample: bool = True
    ) -> Tuple[List[Tensor], List[GaussianParams]]:
        z_params = self.z_posteriors(self.features(x), f)
        return [_draw(params, rng, sample) for params in z_params], z_params


class FactorisedEncoder(SequenceEncoder):
    """q(f | x_{1:T}) prod_t q(z_t | x_t)."""

    def __init__(self, dims: ModelDims) -> None:
        super().__init__(dims)
        self.z_hidden = Linear(dims.feature_dim, dims.hidden)
        self.z_head = GaussianHead(dims.hidden, dims.dim_z)

    def z_posteriors(self, features: Sequence[Tensor], f: Tensor) -> List[GaussianParams]:
        return [self.z_head(tanh(self.z_hidden(feature))) for feature in features]


class FullEncoder(SequenceEncoder):
    """q(f | x_{1:T}) q(z_{1:T} | f, x_{1:T}); f feeds every bi-LSTM step."""

    def __init__(self, dims: ModelDims) -> None:
        super().__init__(dims)
        self.z_bilstm = BiLstm(dims.feature_dim + dims.dim_f, dims.hidden)
        self.z_rnn = RnnCell(self.z_bilstm.output_size, dims.hidden)
        self.z_head = GaussianHead(dims.hidden, dims.dim_z)

    def z_posteriors(self, features: Sequence[Tensor], f: Tensor) -> List[GaussianParams]:
        steps, _ = self.z_bilstm([concat([feature, f], axis=1) for feature in features])
        return [self.z_head(h) for h in self.z_rnn.run(steps)]


def encode(encoder: SequenceEncoder, x: Tensor, rng: np.random.Generator | None, *, sample: bool = True) -> LatentSample:
    return encoder.encode(x, rng, sample=sample)


__all__ = [
    "FactorisedEncoder",
    "FeatureNet",
    "FrameDecoder",
    "FullEncoder",
    "GenerativeModel",
    "LatentSample",
    "ModelDims",
    "PriorDynamics",
    "PriorRollout",
    "SequenceEncoder",
    "decode_steps",
    "encode",
]
