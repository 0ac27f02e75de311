"""Parameterised layers shared by every model variant."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Sequence, Tuple

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, clamp, concat, conv2d, deconv2d, exp, matmul, scale, sigmoid, tanh

LOGVAR_MIN = -8.0
LOGVAR_MAX = 8.0
FORGET_BIAS = 1.0
CONV_KERNEL = 4
CONV_STRIDE = 2


def parameter(shape: Sequence[int], name: str | None = None) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=True, name=name)


def xavier_uniform(tensor: Tensor, fan_in: int, fan_out: int, rng: np.random.Generator) -> None:
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    tensor.data[...] = rng.uniform(-bound, bound, size=tensor.shape).astype(tensor.dtype)


class Module:
    """Container of parameters and sub-modules, walked in attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{index}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def parameters(self) -> List[Tensor]:
        return [param for _, param in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(param.size for param in self.parameters())

    def zero_grads(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def reset_parameters(self, rng: np.random.Generator) -> None:
        """Initialise parameters owned directly by this module."""

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ShapeError(f"parameter names differ (missing={missing}, unexpected={unexpected})")
        for name, param in own.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise ShapeError(f"parameter {name} shape mismatch", param.shape, value.shape)
            param.data[...] = value.astype(param.dtype)


def init_params(module: Module, rng: np.random.Generator) -> Dict[str, Tensor]:
    """Initialise every sub-module in traversal order and return named parameters."""

    for sub in module.modules():
        sub.reset_parameters(rng)
    return dict(module.named_parameters())


# ----------------------------------------------------------------------
class Linear(Module):
    def __init__(self, in_features: int, out_features: int) -> None:
        self.weight = parameter((out_features, in_features))
        self.bias = parameter((out_features,))

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def reset_parameters(self, rng: np.random.Generator) -> None:
        xavier_uniform(self.weight, self.in_features, self.out_features, rng)
        self.bias.data[...] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError("Linear input mismatch", x.shape, self.weight.shape)
        return matmul(x, self.weight.T) + self.bias


class MLP(Module):
    """Stack of Linear layers with tanh between them."""

    def __init__(self, sizes: Sequence[int]) -> None:
        if len(sizes) < 2:
            raise ShapeError("MLP needs at least input and output sizes", tuple(sizes))
        self.layers = [Linear(a, b) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x: Tensor, *, final_activation: bool = False) -> Tensor:
        for index, layer in enumerate(self.layers):
            x = layer(x)
            if index < len(self.layers) - 1 or final_activation:
                x = tanh(x)
        return x


# ----------------------------------------------------------------------
@dataclass
class LstmState:
    h: Tensor
    c: Tensor


class LstmCell(Module):
    """LSTM cell; gate blocks are ordered input, forget, output, candidate."""

    def __init__(self, input_size: int, hidden_size: int) -> None:
        self.input_size = input_size
        self.hidden_size = hidden_size
        if input_size > 0:
            self.w_input = parameter((4 * hidden_size, input_size))
        self.w_hidden = parameter((4 * hidden_size, hidden_size))
        self.bias = parameter((4 * hidden_size,))

    def reset_parameters(self, rng: np.random.Generator) -> None:
        gates = 4 * self.hidden_size
        if self.input_size > 0:
            xavier_uniform(self.w_input, self.input_size, gates, rng)
        xavier_uniform(self.w_hidden, self.hidden_size, gates, rng)
        self.bias.data[...] = 0.0
        self.bias.data[self.hidden_size : 2 * self.hidden_size] = FORGET_BIAS

    def initial_state(self, batch: int, *, like: Tensor | None = None) -> LstmState:
        dtype = like.dtype if like is not None else None
        zeros = np.zeros((batch, self.hidden_size))
        return LstmState(h=Tensor(zeros, dtype=dtype), c=Tensor(zeros, dtype=dtype))

    def step(self, x: Tensor | None, state: LstmState) -> LstmState:
        pre = matmul(state.h, self.w_hidden.T) + self.bias
        if self.input_size > 0:
            if x is None or x.ndim != 2 or x.shape[1] != self.input_size:
                raise ShapeError("LSTM input mismatch", x.shape if x is not None else (), (self.input_size,))
            pre = pre + matmul(x, self.w_input.T)
        size = self.hidden_size
        input_gate = sigmoid(pre[:, 0:size])
        forget_gate = sigmoid(pre[:, size : 2 * size])
        output_gate = sigmoid(pre[:, 2 * size : 3 * size])
        candidate = tanh(pre[:, 3 * size : 4 * size])
        c = forget_gate * state.c + input_gate * candidate
        h = output_gate * tanh(c)
        return LstmState(h=h, c=c)


def lstm_step(cell: LstmCell, x_t: Tensor | None, state: LstmState) -> LstmState:
    return cell.step(x_t, state)


def run_sequence(
    cell: LstmCell,
    inputs: Sequence[Tensor],
    state: LstmState | None = None,
) -> Tuple[List[Tensor], LstmState]:
    if not inputs:
        raise ShapeError("run_sequence needs at least one step")
    if state is None:
        state = cell.initial_state(inputs[0].shape[0], like=inputs[0])
    outputs: List[Tensor] = []
    for x_t in inputs:
        state = cell.step(x_t, state)
        outputs.append(state.h)
    return outputs, state


class BiLstm(Module):
    def __init__(self, input_size: int, hidden_size: int) -> None:
        self.forward_cell = LstmCell(input_size, hidden_size)
        self.backward_cell = LstmCell(input_size, hidden_size)

    @property
    def output_size(self) -> int:
        return 2 * self.forward_cell.hidden_size

    def __call__(self, inputs: Sequence[Tensor]) -> Tuple[List[Tensor], Tensor]:
        """Return per-step concatenated states and the sequence summary.

        The summary joins the last forward state with the first backward state.
        """

        forward, _ = run_sequence(self.forward_cell, inputs)
        backward_rev, _ = run_sequence(self.backward_cell, list(reversed(inputs)))
        backward = list(reversed(backward_rev))
        steps = [concat([f, b], axis=1) for f, b in zip(forward, backward)]
        summary = concat([forward[-1], backward[0]], axis=1)
        return steps, summary


def run_bilstm(bilstm: BiLstm, inputs: Sequence[Tensor]) -> List[Tensor]:
    steps, _ = bilstm(inputs)
    return steps


class RnnCell(Module):
    """Elman cell: h_t = tanh(W x_t + U h_{t-1} + b)."""

    def __init__(self, input_size: int, hidden_size: int) -> None:
        self.hidden_size = hidden_size
        self.input_proj = Linear(input_size, hidden_size)
        self.w_hidden = parameter((hidden_size, hidden_size))

    def reset_parameters(self, rng: np.random.Generator) -> None:
        xavier_uniform(self.w_hidden, self.hidden_size, self.hidden_size, rng)

    def run(self, inputs: Sequence[Tensor]) -> List[Tensor]:
        h = Tensor(np.zeros((inputs[0].shape[0], self.hidden_size)), dtype=inputs[0].dtype)
        outputs: List[Tensor] = []
        for x_t in inputs:
            h = tanh(self.input_proj(x_t) + matmul(h, self.w_hidden.T))
            outputs.append(h)
        return outputs


# ----------------------------------------------------------------------
@dataclass
class GaussianParams:
    """Diagonal Gaussian given by mean and log-variance."""

    mean: Tensor
    logvar: Tensor

    @classmethod
    def standard(cls, batch: int, dim: int, *, like: Tensor | None = None) -> "GaussianParams":
        dtype = like.dtype if like is not None else None
        zeros = np.zeros((batch, dim))
        return cls(mean=Tensor(zeros, dtype=dtype), logvar=Tensor(zeros, dtype=dtype))

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


class GaussianHead(Module):
    def __init__(self, in_features: int, out_features: int) -> None:
        self.mean = Linear(in_features, out_features)
        self.logvar = Linear(in_features, out_features)

    def __call__(self, x: Tensor) -> GaussianParams:
        return GaussianParams(
            mean=self.mean(x),
            logvar=clamp(self.logvar(x), LOGVAR_MIN, LOGVAR_MAX),
        )


def reparameterize(params: GaussianParams, eps: np.ndarray) -> Tensor:
    if eps.shape != params.mean.shape:
        raise ShapeError("noise shape differs from mean", eps.shape, params.mean.shape)
    noise = Tensor(eps, dtype=params.mean.dtype)
    return params.mean + exp(scale(params.logvar, 0.5)) * noise


def sample_gaussian(params: GaussianParams, rng: np.random.Generator) -> Tensor:
    return reparameterize(params, rng.standard_normal(params.mean.shape))


# ----------------------------------------------------------------------
def _check_frame_size(size: int, layers: int) -> int:
    factor = 2**layers
    if size < factor or size % factor:
        raise ShapeError(f"frame size {size} is not divisible by 2^{layers}")
    return size // factor


class ConvEncoder(Module):
    """Stride-2 conv stack followed by a tanh Linear projection."""

    def __init__(self, in_channels: int, frame_size: int, channels: int, layers: int, out_features: int) -> None:
        final = _check_frame_size(frame_size, layers)
        self.in_channels = in_channels
        self.frame_size = frame_size
        self.kernels = [
            parameter((channels, in_channels if index == 0 else channels, CONV_KERNEL, CONV_KERNEL))
            for index in range(layers)
        ]
        self.biases = [parameter((channels,)) for _ in range(layers)]
        self.project = Linear(channels * final * final, out_features)

    def reset_parameters(self, rng: np.random.Generator) -> None:
        for kernel, bias in zip(self.kernels, self.biases):
            out_c, in_c, k, _ = kernel.shape
            xavier_uniform(kernel, in_c * k * k, out_c * k * k, rng)
            bias.data[...] = 0.0

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for index, (kernel, bias) in enumerate(zip(self.kernels, self.biases)):
            yield f"{prefix}conv.{index}.kernel", kernel
            yield f"{prefix}conv.{index}.bias", bias
        yield from self.project.named_parameters(prefix + "project.")

    def __call__(self, x: Tensor) -> Tensor:
        expected = (self.in_channels, self.frame_size, self.frame_size)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError("ConvEncoder input mismatch", x.shape, expected)
        for kernel, bias in zip(self.kernels, self.biases):
            x = tanh(conv2d(x, kernel, CONV_STRIDE) + bias.reshape(1, -1, 1, 1))
        return tanh(self.project(x.reshape(x.shape[0], -1)))


class DeconvDecoder(Module):
    """Linear projection to a coarse map, then stride-2 deconvolutions."""

    def __init__(self, in_features: int, out_channels: int, frame_size: int, channels: int, layers: int) -> None:
        self.base = _check_frame_size(frame_size, layers)
        self.channels = channels
        self.out_channels = out_channels
        self.frame_size = frame_size
        self.project = Linear(in_features, channels * self.base * self.base)
        self.kernels = [
            parameter((channels, out_channels if index == layers - 1 else channels, CONV_KERNEL, CONV_KERNEL))
            for index in range(layers)
        ]
        self.biases = [parameter((kernel.shape[1],)) for kernel in self.kernels]

    def reset_parameters(self, rng: np.random.Generator) -> None:
        for kernel, bias in zip(self.kernels, self.biases):
            in_c, out_c, k, _ = kernel.shape
            xavier_uniform(kernel, in_c * k * k, out_c * k * k, rng)
            bias.data[...] = 0.0

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        yield from self.project.named_parameters(prefix + "project.")
        for index, (kernel, bias) in enumerate(zip(self.kernels, self.biases)):
            yield f"{prefix}deconv.{index}.kernel", kernel
            yield f"{prefix}deconv.{index}.bias", bias

    def __call__(self, x: Tensor) -> Tensor:
        x = tanh(self.project(x)).reshape(x.shape[0], self.channels, self.base, self.base)
        last = len(self.kernels) - 1
        for index, (kernel, bias) in enumerate(zip(self.kernels, self.biases)):
            x = deconv2d(x, kernel, CONV_STRIDE) + bias.reshape(1, -1, 1, 1)
            if index < last:
                x = tanh(x)
        return x


__all__ = [
    "BiLstm",
    "ConvEncoder",
    "DeconvDecoder",
    "GaussianHead",
    "GaussianParams",
    "LOGVAR_MAX",
    "LOGVAR_MIN",
    "Linear",
    "LstmCell",
    "LstmState",
    "MLP",
    "Module",
    "RnnCell",
    "init_params",
    "lstm_step",
    "parameter",
    "reparameterize",
    "run_bilstm",
    "run_sequence",
    "sample_gaussian",
    "xavier_uniform",
]
