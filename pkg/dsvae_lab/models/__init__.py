"""Model variants: the DSVAE (factorised or full q) and deterministic baselines."""

from __future__ import annotations

from typing import Any, Dict, Mapping, Sequence, Tuple

import numpy as np

from ..core.layers import Module, init_params
from ..errors import ConfigError
from .baselines import LSTM_C, LSTM_F, DeterministicBaseline, GlobalEncoder
from .dsvae import FactorisedEncoder, FullEncoder, GenerativeModel, ModelDims, SequenceEncoder
from .likelihoods import LikelihoodHead

DSVAE_FACTORISED = "dsvae-factorised"
DSVAE_FULL = "dsvae-full"
VARIANTS = (DSVAE_FACTORISED, DSVAE_FULL, LSTM_F, LSTM_C)

_DIM_KEYS = ("dim_f", "dim_z", "hidden", "feature_dim", "channels", "conv_layers", "likelihood", "mixture_components")


class SequenceModel(Module):
    """Generator (theta) and encoder (phi) trained together."""

    def __init__(self, variant: str, dims: ModelDims) -> None:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown model variant {variant!r}; expected one of {list(VARIANTS)}", key="model.variant")
        self.variant = variant
        self.dims = dims
        if variant in (LSTM_F, LSTM_C):
            self.generator: GenerativeModel | DeterministicBaseline = DeterministicBaseline(dims, variant)
            self.encoder: SequenceEncoder | GlobalEncoder = GlobalEncoder(dims)
        else:
            self.generator = GenerativeModel(dims)
            self.encoder = FactorisedEncoder(dims) if variant == DSVAE_FACTORISED else FullEncoder(dims)

    @property
    def is_baseline(self) -> bool:
        return isinstance(self.generator, DeterministicBaseline)

    @property
    def head(self) -> LikelihoodHead:
        return self.generator.head

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: param.shape for name, param in self.named_parameters()}


def model_dims(model_config: Mapping[str, Any], frame_shape: Sequence[int]) -> ModelDims:
    values = {key: model_config[key] for key in _DIM_KEYS if key in model_config}
    return ModelDims(frame_shape=tuple(int(dim) for dim in frame_shape), **values)


def build_model(
    model_config: Mapping[str, Any],
    frame_shape: Sequence[int],
    rng: np.random.Generator | None = None,
) -> SequenceModel:
    """Construct the configured variant; initialise parameters when ``rng`` is given."""

    model = SequenceModel(str(model_config.get("variant", DSVAE_FACTORISED)), model_dims(model_config, frame_shape))
    if rng is not None:
        init_params(model, rng)
    return model


__all__ = [
    "DSVAE_FACTORISED",
    "DSVAE_FULL",
    "LSTM_C",
    "LSTM_F",
    "VARIANTS",
    "DeterministicBaseline",
    "FactorisedEncoder",
    "FullEncoder",
    "GenerativeModel",
    "GlobalEncoder",
    "ModelDims",
    "SequenceModel",
    "build_model",
    "model_dims",
]
