"""Sampling from trained models: generation, reconstruction, swapping, imputation.

Every function runs without graph recording and returns plain numpy arrays
together with the latents used, so callers can log or compare them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .core.layers import GaussianParams, sample_gaussian
from .core.rng import make_rng
from .core.tensor import Tensor, no_grad, stack
from .errors import DomainError, ShapeError
from .models import DeterministicBaseline, SequenceModel

MODES = ("unconditional", "fix_f", "fix_z", "reconstruct", "swap", "impute")
RANDOMIZE = ("none", "f", "z")


@dataclass(frozen=True)
class GenerationRequest:
    mode: str
    count: int = 1
    horizon: int = 8
    sources: tuple[int, ...] = ()
    t_obs: int | None = None
    seed: int = 0
    randomize: str = "none"
    sample_pixels: bool = False

    def validate(self) -> "GenerationRequest":
        if self.mode not in MODES:
            raise DomainError(f"unknown generation mode {self.mode!r}; expected one of {list(MODES)}")
        if self.count < 1:
            raise DomainError(f"count must be >= 1, got {self.count}")
        if self.horizon < 1:
            raise DomainError(f"horizon must be >= 1, got {self.horizon}")
        if self.randomize not in RANDOMIZE:
            raise DomainError(f"randomize must be one of {list(RANDOMIZE)}")
        if self.mode == "swap" and len(self.sources) != 2:
            raise DomainError("swap needs exactly two source sequences")
        if self.mode in ("reconstruct", "impute") and not self.sources:
            raise DomainError(f"{self.mode} needs a source sequence")
        if self.mode == "impute":
            if self.t_obs is None or not 1 <= self.t_obs < self.horizon:
                raise DomainError(f"t_obs must satisfy 1 <= t_obs < T={self.horizon}, got {self.t_obs}")
        return self


@dataclass
class GeneratedBatch:
    """Frames (K, T, *frame) and the latents that produced them.

    ``z`` is (K, T, dim_z) for the DSVAE and (K, dim_z) for the global-latent
    baselines.
    """

    frames: np.ndarray
    f: np.ndarray
    z: np.ndarray

    @property
    def count(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class ImputationResult:
    batch: GeneratedBatch
    first_predicted: int

    @property
    def frames(self) -> np.ndarray:
        return self.batch.frames

    @property
    def predicted(self) -> np.ndarray:
        return self.batch.frames[:, self.first_predicted :]


# ----------------------------------------------------------------------
def _as_batch(x: np.ndarray, frame_shape: Sequence[int]) -> np.ndarray:
    data = np.asarray(x)
    if data.ndim == len(frame_shape) + 1:
        data = data[None]
    if data.ndim != len(frame_shape) + 2 or tuple(data.shape[2:]) != tuple(frame_shape):
        raise ShapeError("sequence does not match the model frame shape", data.shape, tuple(frame_shape))
    if data.shape[1] == 0:
        raise ShapeError("empty sequence", data.shape)
    return data


def _render(model: SequenceModel, params: Tensor, rng: np.random.Generator | None, sample_pixels: bool) -> np.ndarray:
    batch, steps = params.shape[:2]
    flat = params.data.reshape(batch * steps, *params.shape[2:])
    if sample_pixels:
        if rng is None:
            raise DomainError("pixel sampling requires an rng")
        values = model.head.sample(flat, rng)
    else:
        values = model.head.mean(flat)
    return values.reshape(batch, steps, *model.dims.frame_shape)


def _global_standard(batch: int, dim: int, rng: np.random.Generator) -> Tensor:
    return sample_gaussian(GaussianParams.standard(batch, dim), rng)


def _repeat(t: Tensor, count: int) -> Tensor:
    return stack([t[0]] * count, axis=0)


def decode_latents(
    model: SequenceModel,
    f: Tensor,
    z: Sequence[Tensor] | Tensor,
    steps: int,
    *,
    rng: np.random.Generator | None = None,
    sample_pixels: bool = False,
) -> GeneratedBatch:
    """Decode frames from f and either a z path (DSVAE) or a global z (baselines)."""

    generator = model.generator
    with no_grad():
        if isinstance(generator, DeterministicBaseline):
            params = generator.decode_sequence(generator.baseline_rollout(z, f, steps), f)
            z_out = z.data.copy()
        else:
            if len(z) != steps:
                raise ShapeError(f"z path has {len(z)} steps, expected {steps}")
            params = generator.decode_sequence(z, f)
            z_out = np.stack([z_t.data for z_t in z], axis=1)
        frames = _render(model, params, rng, sample_pixels)
    return GeneratedBatch(frames=frames, f=f.data.copy(), z=z_out)


def _prior_z(model: SequenceModel, batch: int, steps: int, rng: np.random.Generator) -> Sequence[Tensor] | Tensor:
    if model.is_baseline:
        return _global_standard(batch, model.dims.dim_z, rng)
    return model.generator.prior_rollout(steps, rng, batch=batch).z


# ----------------------------------------------------------------------
def generate_unconditional(
    model: SequenceModel, count: int, steps: int, rng: np.random.Generator, *, sample_pixels: bool = False
) -> GeneratedBatch:
    """f ~ p(f), z_{1:T} from the prior dynamics (baselines: global z ~ N(0, I))."""

    with no_grad():
        f = _global_standard(count, model.dims.dim_f, rng)
        z = _prior_z(model, count, steps, rng)
    return decode_latents(model, f, z, steps, rng=rng, sample_pixels=sample_pixels)


def generate_fixed_f(
    model: SequenceModel, count: int, steps: int, rng: np.random.Generator, *, sample_pixels: bool = False
) -> GeneratedBatch:
    """One f shared by all K sequences; z resampled per sequence."""

    with no_grad():
        f = _repeat(_global_standard(1, model.dims.dim_f, rng), count)
        z = _prior_z(model, count, steps, rng)
    return decode_latents(model, f, z, steps, rng=rng, sample_pixels=sample_pixels)


def generate_fixed_z(
    model: SequenceModel, count: int, steps: int, rng: np.random.Generator, *, sample_pixels: bool = False
) -> GeneratedBatch:
    """One z path (or global z) shared by all K sequences; f resampled per sequence."""

    with no_grad():
        f = _global_standard(count, model.dims.dim_f, rng)
        shared = _prior_z(model, 1, steps, rng)
        if isinstance(shared, Tensor):
            z: Sequence[Tensor] | Tensor = _repeat(shared, count)
        else:
            z = [_repeat(z_t, count) for z_t in shared]
    return decode_latents(model, f, z, steps, rng=rng, sample_pixels=sample_pixels)


def reconstruct(
    model: SequenceModel,
    x: np.ndarray,
    randomize: str,
    rng: np.random.Generator,
    *,
    sample: bool = True,
    sample_pixels: bool = False,
) -> GeneratedBatch:
    """Encode x, optionally replace f or z with prior draws, and decode."""

    if randomize not in RANDOMIZE:
        raise DomainError(f"randomize must be one of {list(RANDOMIZE)}, got {randomize!r}")
    data = _as_batch(x, model.dims.frame_shape)
    batch, steps = data.shape[:2]
    with no_grad():
        latents = model.encoder.encode(Tensor(data), rng, sample=sample)
        f, z = latents.f, latents.z
        if randomize == "f":
            f = _global_standard(batch, model.dims.dim_f, rng)
        elif randomize == "z":
            z = _prior_z(model, batch, steps, rng)
    return decode_latents(model, f, z, steps, rng=rng, sample_pixels=sample_pixels)


def swap_features(
    model: SequenceModel,
    x_a: np.ndarray,
    x_b: np.ndarray,
    rng: np.random.Generator,
    *,
    sample_z: bool = True,
    sample_pixels: bool = False,
) -> GeneratedBatch:
    """Decode with f from ``x_a`` (posterior mean) and z from ``x_b``.

    The full encoder infers z^b conditioned on the f^b inferred from ``x_b``.
    """

    a = _as_batch(x_a, model.dims.frame_shape)
    b = _as_batch(x_b, model.dims.frame_shape)
    if a.shape != b.shape:
        raise ShapeError("swap needs sequences of equal length", a.shape, b.shape)
    with no_grad():
        f_a = model.encoder.encode(Tensor(a), None, sample=False).f
        latents_b = model.encoder.encode(Tensor(b), rng if sample_z else None, sample=sample_z)
    return decode_latents(model, f_a, latents_b.z, a.shape[1], rng=rng, sample_pixels=sample_pixels)


def impute(
    model: SequenceModel,
    x: np.ndarray,
    t_obs: int,
    rng: np.random.Generator,
    *,
    sample: bool = True,
    sample_pixels: bool = False,
) -> ImputationResult:
    """Observe the first ``t_obs`` frames and predict the rest with the prior dynamics.

    Baselines encode their global latents from the prefix and unroll to T.
    """

    data = _as_batch(x, model.dims.frame_shape)
    steps = data.shape[1]
    if not 1 <= t_obs < steps:
        raise DomainError(f"t_obs must satisfy 1 <= t_obs < T={steps}, got {t_obs}")
    prefix = np.array(data[:, :t_obs], copy=True)
    with no_grad():
        latents = model.encoder.encode(Tensor(prefix), rng, sample=sample)
        if model.is_baseline:
            z: Sequence[Tensor] | Tensor = latents.z
        else:
            rollout = model.generator.prior_rollout(steps - t_obs, rng, z_init=latents.z, sample=sample)
            z = list(latents.z) + rollout.z
    batch = decode_latents(model, latents.f, z, steps, rng=rng, sample_pixels=sample_pixels)
    return ImputationResult(batch=batch, first_predicted=t_obs)


def run_request(model: SequenceModel, request: GenerationRequest, sources: List[np.ndarray]) -> GeneratedBatch:
    """Dispatch a validated request; ``sources`` holds the referenced sequences."""

    request.validate()
    rng = make_rng(request.seed, "sampling")
    options = {"sample_pixels": request.sample_pixels}
    if request.mode == "unconditional":
        return generate_unconditional(model, request.count, request.horizon, rng, **options)
    if request.mode == "fix_f":
        return generate_fixed_f(model, request.count, request.horizon, rng, **options)
    if request.mode == "fix_z":
        return generate_fixed_z(model, request.count, request.horizon, rng, **options)
    if request.mode == "reconstruct":
        return reconstruct(model, sources[0], request.randomize, rng, **options)
    if request.mode == "swap":
        return swap_features(model, sources[0], sources[1], rng, **options)
    return impute(model, sources[0], int(request.t_obs), rng, **options).batch


__all__ = [
    "MODES",
    "GeneratedBatch",
    "GenerationRequest",
    "ImputationResult",
    "decode_latents",
    "generate_fixed_f",
    "generate_fixed_z",
    "generate_unconditional",
    "impute",
    "reconstruct",
    "run_request",
    "swap_features",
]
