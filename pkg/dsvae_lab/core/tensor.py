"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` that records its
parents and a vector-Jacobian closure. :meth:`Tensor.backward` walks the
recorded graph in reverse topological order and accumulates gradients into
leaf tensors created with ``requires_grad=True``.

Storage defaults to float32; reductions accumulate in float64. Gradient checks
switch storage to float64 with :func:`default_dtype`.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DomainError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def get_default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread."""

    previous = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Change the storage dtype for tensors created on the current thread."""

    previous = get_default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(
        self,
        data,
        *,
        requires_grad: bool = False,
        name: str | None = None,
        dtype=None,
    ) -> None:
        target = np.dtype(dtype) if dtype is not None else get_default_dtype()
        self.data = np.ascontiguousarray(np.asarray(data, dtype=target))
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError("item() requires a single-element tensor", self.shape)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}, op={self.op}{label})"

    # ------------------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return negate(self)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return index_select(self, index)

    # ------------------------------------------------------------------
    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def softplus(self) -> "Tensor":
        return softplus(self)

    def square(self) -> "Tensor":
        return square(self)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis, keepdims=keepdims)

    def max(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return reduce_max(self, axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)

    def clamp(self, low: float, high: float) -> "Tensor":
        return clamp(self, low, high)

    # ------------------------------------------------------------------
    def backward(self) -> None:
        """Populate ``grad`` on every reachable leaf that requires it.

        Gradients accumulate; callers zero them between steps.
        """

        if self.size != 1:
            raise ShapeError("backward() requires a scalar loss", self.shape)
        graph = Graph.build(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in graph.nodes:
            upstream = grads.pop(id(node), None)
            if upstream is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = upstream.copy() if node.grad is None else node.grad + upstream
                continue
            for parent, contribution in zip(node._parents, node._backward(upstream)):
                if contribution is None or not parent.requires_grad:
                    continue
                contribution = _unbroadcast(contribution, parent.shape).astype(parent.dtype, copy=False)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contribution
                else:
                    grads[key] = contribution


@dataclass(frozen=True)
class Graph:
    """Nodes reachable from a root, ordered so every node precedes its parents."""

    nodes: Tuple[Tensor, ...]

    @classmethod
    def build(cls, root: Tensor) -> "Graph":
        order: List[Tensor] = []
        visited: set[int] = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))
        order.reverse()
        return cls(nodes=tuple(order))


# ----------------------------------------------------------------------
def as_tensor(value, *, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled() and any(parent.requires_grad for parent in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0, dtype=np.float64)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True, dtype=np.float64)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes", a.shape, b.shape) from None


def _check_axis(t: Tensor, axis: int | None) -> int | None:
    if axis is None:
        return None
    if not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"axis {axis} out of range", t.shape)
    return axis % t.ndim


# ----------------------------------------------------------------------
# elementwise
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data
    return _make(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def _pair(a, b) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def negate(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "negate")


def scale(a: Tensor, factor: float) -> Tensor:
    factor = a.dtype.type(factor)
    return _make(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out = _stable_sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = (np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))).astype(x.dtype)
    return _make(out, (a,), lambda g: (g * _stable_sigmoid(x),), "softplus")


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def clamp(a: Tensor, low: float, high: float) -> Tensor:
    mask = (a.data >= low) & (a.data <= high)
    return _make(np.clip(a.data, low, high), (a,), lambda g: (g * mask,), "clamp")


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "negate": negate,
    "scale": scale,
}


def elementwise(op: str, a: Tensor, b=None) -> Tensor:
    """Dispatch an elementwise op by name; ``scale`` takes a float as ``b``."""

    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise DomainError(f"unknown elementwise op {op!r}") from None
    if op in {"add", "sub", "mul", "div", "scale"}:
        if b is None:
            raise DomainError(f"{op} requires a second operand")
        return fn(a, b)
    return fn(a)


# ----------------------------------------------------------------------
# linear algebra
def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul: inner dimensions differ", a.shape, b.shape)
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


# ----------------------------------------------------------------------
# reductions
def reduce_sum(t: Tensor, axis: int | None = None, *, keepdims: bool = False) -> Tensor:
    axis = _check_axis(t, axis)
    out = np.sum(t.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(t.dtype)

    def backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, t.shape),)

    return _make(np.asarray(out), (t,), backward, "sum")


def reduce_mean(t: Tensor, axis: int | None = None, *, keepdims: bool = False) -> Tensor:
    axis = _check_axis(t, axis)
    count = t.size if axis is None else t.shape[axis]
    out = np.mean(t.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(t.dtype)

    def backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, t.shape),)

    return _make(np.asarray(out), (t,), backward, "mean")


def reduce_max(t: Tensor, axis: int | None = None, *, keepdims: bool = False) -> Tensor:
    axis = _check_axis(t, axis)
    kept = np.max(t.data, axis=axis, keepdims=True)
    mask = (t.data == kept).astype(t.dtype)
    mask /= np.sum(mask, axis=axis, keepdims=True)
    out = kept if keepdims else np.squeeze(kept, axis=axis)

    def backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (g * mask,)

    return _make(np.asarray(out), (t,), backward, "max")


REDUCTIONS = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max}


def reduce(op: str, t: Tensor, axis: int | None = None, *, keepdims: bool = False) -> Tensor:
    try:
        fn = REDUCTIONS[op]
    except KeyError:
        raise DomainError(f"unknown reduction {op!r}") from None
    return fn(t, axis, keepdims=keepdims)


def _softmax_data(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted.astype(np.float64))
    return (e / np.sum(e, axis=axis, keepdims=True)).astype(x.dtype)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(t, axis)
    out = _softmax_data(t.data, axis)

    def backward(g: np.ndarray):
        inner = np.sum(g * out, axis=axis, keepdims=True, dtype=np.float64)
        return (out * (g - inner),)

    return _make(out, (t,), backward, "softmax")


def log_sum_exp(t: Tensor, axis: int = -1, *, keepdims: bool = False) -> Tensor:
    axis = _check_axis(t, axis)
    peak = np.max(t.data, axis=axis, keepdims=True)
    total = np.sum(np.exp((t.data - peak).astype(np.float64)), axis=axis, keepdims=True)
    kept = (peak + np.log(total)).astype(t.dtype)
    weights = _softmax_data(t.data, axis)
    out = kept if keepdims else np.squeeze(kept, axis=axis)

    def backward(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return _make(np.asarray(out), (t,), backward, "log_sum_exp")


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    return t - log_sum_exp(t, axis, keepdims=True)


# ----------------------------------------------------------------------
# shape manipulation
def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = t.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape to {list(shape)}", t.shape) from None
    return _make(out, (t,), lambda g: (g.reshape(t.shape),), "reshape")


def transpose(t: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(t.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(t.data, axes), (t,), lambda g: (np.transpose(g, inverse),), "transpose")


def broadcast_to(t: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = np.broadcast_to(t.data, tuple(shape))
    except ValueError:
        raise ShapeError("broadcast_to: incompatible shapes", t.shape, tuple(shape)) from None
    return _make(np.ascontiguousarray(out), (t,), lambda g: (g,), "broadcast_to")


def index_select(t: Tensor, index) -> Tensor:
    out = t.data[index]

    def backward(g: np.ndarray):
        full = np.zeros(t.shape, dtype=t.dtype)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, copy=True), (t,), backward, "index")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty list")
    axis = _check_axis(tensors[0], axis)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("stack of an empty list")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError("stack: shapes differ", *shapes)
    out = np.stack([t.data for t in tensors], axis=axis)
    count = len(tensors)
    return _make(out, tuple(tensors), lambda g: tuple(np.take(g, i, axis=axis) for i in range(count)), "stack")


# ----------------------------------------------------------------------
# convolution
def _conv_padding(kernel: int, stride: int) -> int:
    if (kernel - stride) % 2 or kernel < stride:
        raise ShapeError(f"kernel {kernel} with stride {stride} has no symmetric padding")
    return (kernel - stride) // 2


def _conv_out_size(size: int, kernel: int, stride: int, pad: int, shape) -> int:
    span = size + 2 * pad - kernel
    if span < 0 or span % stride:
        raise ShapeError(f"spatial size {size} incompatible with kernel {kernel}/stride {stride}", shape)
    return span // stride + 1


def _columns(x: np.ndarray, kernel: int, stride: int, pad: int, out_h: int, out_w: int) -> np.ndarray:
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(padded, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    n, c = x.shape[:2]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * kernel * kernel)


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n = x.shape[0]
    out_c, _, kernel, _ = w.shape
    out_h = _conv_out_size(x.shape[2], kernel, stride, pad, x.shape)
    out_w = _conv_out_size(x.shape[3], kernel, stride, pad, x.shape)
    cols = _columns(x, kernel, stride, pad, out_h, out_w)
    out = cols @ w.reshape(out_c, -1).T
    return np.ascontiguousarray(out.reshape(n, out_h, out_w, out_c).transpose(0, 3, 1, 2))


def _conv_input_grad(g: np.ndarray, w: np.ndarray, stride: int, pad: int, x_shape) -> np.ndarray:
    n, c, h, width = x_shape
    out_c, _, kernel, _ = w.shape
    out_h, out_w = g.shape[2:]
    cols = g.transpose(0, 2, 3, 1).reshape(-1, out_c) @ w.reshape(out_c, -1)
    cols = cols.reshape(n, out_h, out_w, c, kernel, kernel).transpose(0, 3, 4, 5, 1, 2)
    padded = np.zeros((n, c, h + 2 * pad, width + 2 * pad), dtype=g.dtype)
    for i in range(kernel):
        for j in range(kernel):
            padded[:, :, i : i + stride * (out_h - 1) + 1 : stride, j : j + stride * (out_w - 1) + 1 : stride] += cols[
                :, :, i, j
            ]
    return np.ascontiguousarray(padded[:, :, pad : pad + h, pad : pad + width])


def _conv_weight_grad(x: np.ndarray, g: np.ndarray, stride: int, pad: int, w_shape) -> np.ndarray:
    out_c, _, kernel, _ = w_shape
    out_h, out_w = g.shape[2:]
    cols = _columns(x, kernel, stride, pad, out_h, out_w)
    return (g.transpose(0, 2, 3, 1).reshape(-1, out_c).T @ cols).reshape(w_shape)


def _check_conv_operands(x: Tensor, w: Tensor, channel_axis: int, op: str) -> None:
    if x.ndim != 4 or w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"{op}: expected NCHW input and square 4-d kernel", x.shape, w.shape)
    if x.shape[1] != w.shape[channel_axis]:
        raise ShapeError(f"{op}: channel mismatch", x.shape, w.shape)


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Cross-correlation with kernels laid out (out, in, k, k)."""

    _check_conv_operands(x, kernels, 1, "conv2d")
    pad = _conv_padding(kernels.shape[2], stride)
    out = _conv_forward(x.data, kernels.data, stride, pad)

    def backward(g: np.ndarray):
        return (
            _conv_input_grad(g, kernels.data, stride, pad, x.shape),
            _conv_weight_grad(x.data, g, stride, pad, kernels.shape),
        )

    return _make(out, (x, kernels), backward, "conv2d")


def deconv2d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Transposed convolution with kernels laid out (in, out, k, k).

    ``<conv2d(a, k), b> == <a, deconv2d(b, k)>`` for matching shapes.
    """

    _check_conv_operands(x, kernels, 0, "deconv2d")
    kernel = kernels.shape[2]
    pad = _conv_padding(kernel, stride)
    n, _, h, w = x.shape
    out_shape = (n, kernels.shape[1], (h - 1) * stride - 2 * pad + kernel, (w - 1) * stride - 2 * pad + kernel)
    out = _conv_input_grad(x.data, kernels.data, stride, pad, out_shape)

    def backward(g: np.ndarray):
        return (
            _conv_forward(g, kernels.data, stride, pad),
            _conv_weight_grad(g, x.data, stride, pad, kernels.shape),
        )

    return _make(out, (x, kernels), backward, "deconv2d")


__all__ = [
    "Graph",
    "Tensor",
    "add",
    "as_tensor",
    "broadcast_to",
    "clamp",
    "concat",
    "conv2d",
    "deconv2d",
    "default_dtype",
    "div",
    "elementwise",
    "exp",
    "get_default_dtype",
    "index_select",
    "log",
    "log_softmax",
    "log_sum_exp",
    "matmul",
    "mul",
    "negate",
    "no_grad",
    "reduce",
    "reduce_max",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "softmax",
    "softplus",
    "square",
    "stack",
    "sub",
    "tanh",
    "transpose",
]
