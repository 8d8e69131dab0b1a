"""Reverse-mode automatic differentiation over numpy arrays.

This is a small tape-based engine covering exactly the primitives the 1D
signal classifiers and regularizers in this package need: elementwise
arithmetic with broadcasting, ReLU, log/exp/abs, reductions, dense affine
maps, 1D convolution (cross-correlation with explicit zero padding), max
and global-average pooling, temperature softmax, and row gathering. All
arithmetic is in double precision. Gradients are exact reverse-mode
derivatives of a scalar loss, taken with respect to parameters and inputs
alike.

Not supported on purpose: general tensor algebra, higher-order
derivatives, GPU execution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested primitive."""


class NonFiniteError(FloatingPointError):
    """A node in the compute graph produced NaN or infinity."""


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the tape: an ndarray value plus the recipe to backprop it.

    Leaf tensors (parameters, inputs, constants) have no parents. Gradient
    accumulation never mutates arrays in place, so backward closures may
    hand out aliased views safely.
    """

    __slots__ = ("data", "grad", "op", "_parents", "_backward")

    def __init__(self, data, parents: tuple = (), backward=None, op: str = "leaf"):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's values; gradients stop here."""
        return Tensor(self.data, op="const")

    def topo_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Backpropagate from this scalar, accumulating .grad on the tape."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        order = self.topo_order()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, contribution in zip(node._parents, node._backward(node.grad)):
                if contribution is None:
                    continue
                if parent.grad is None:
                    parent.grad = contribution
                else:
                    parent.grad = parent.grad + contribution

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape})"


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, op="const")


# -- elementwise primitives ----------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out_data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor(out_data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out_data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor(out_data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out_data = a.data * b.data

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return Tensor(out_data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out_data = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return Tensor(out_data, (a, b), backward, "div")


def square(a) -> Tensor:
    a = _lift(a)

    def backward(g):
        return (2.0 * a.data * g,)

    return Tensor(a.data * a.data, (a,), backward, "square")


def relu(a) -> Tensor:
    """Elementwise max(x, 0). The derivative at exactly 0 is 0."""
    a = _lift(a)
    mask = a.data > 0.0

    def backward(g):
        return (g * mask,)

    return Tensor(np.maximum(a.data, 0.0), (a,), backward, "relu")


def absolute(a) -> Tensor:
    """Elementwise |x| with subgradient sign(x) (0 at 0)."""
    a = _lift(a)
    s = np.sign(a.data)

    def backward(g):
        return (g * s,)

    return Tensor(np.abs(a.data), (a,), backward, "abs")


def log(a) -> Tensor:
    a = _lift(a)

    def backward(g):
        return (g / a.data,)

    return Tensor(np.log(a.data), (a,), backward, "log")


def exp(a) -> Tensor:
    a = _lift(a)
    out_data = np.exp(a.data)

    def backward(g):
        return (g * out_data,)

    return Tensor(out_data, (a,), backward, "exp")


def clamp_min(a, floor: float) -> Tensor:
    """max(x, floor) against a scalar; gradient passes only where x > floor."""
    a = _lift(a)
    mask = a.data > floor

    def backward(g):
        return (g * mask,)

    return Tensor(np.where(mask, a.data, floor), (a,), backward, "clamp_min")


# -- reductions and reshaping ----------------------------------------------


def reduce_sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        expanded = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(expanded, a.data.shape).copy(),)

    return Tensor(out_data, (a,), backward, "sum")


def reduce_mean(a, axis: int | None = None) -> Tensor:
    a = _lift(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(reduce_sum(a, axis=axis), 1.0 / count)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _lift(a)

    def backward(g):
        return (g.reshape(a.data.shape),)

    return Tensor(a.data.reshape(shape), (a,), backward, "reshape")


def gather_rows(a, indices) -> Tensor:
    """Pick a[i, indices[i]] for each row i of a 2D tensor."""
    a = _lift(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.data.ndim != 2 or idx.shape != (a.data.shape[0],):
        raise ShapeError(
            f"gather_rows needs (B, N) values and (B,) indices, got "
            f"{a.data.shape} and {idx.shape}"
        )
    rows = np.arange(a.data.shape[0])

    def backward(g):
        grad = np.zeros_like(a.data)
        grad[rows, idx] = g
        return (grad,)

    return Tensor(a.data[rows, idx], (a,), backward, "gather_rows")


# -- dense and convolutional maps -------------------------------------------


_EINSUM_PATHS: dict[tuple, list] = {}


def _einsum(equation: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """np.einsum with the contraction path cached per (equation, shapes)."""
    key = (equation, a.shape, b.shape)
    path = _EINSUM_PATHS.get(key)
    if path is None:
        path = np.einsum_path(equation, a, b, optimize="optimal")[0]
        _EINSUM_PATHS[key] = path
    return np.einsum(equation, a, b, optimize=path)


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul shapes {a.data.shape} and {b.data.shape} do not agree"
        )
    out_data = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(out_data, (a, b), backward, "matmul")


def conv1d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate (B, C, L) signals with (O, C, K) filter banks.

    Zero padding is explicit and symmetric; out-of-range samples read as 0.
    """
    x, w = _lift(x), _lift(w)
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError("conv1d expects (B, C, L) input and (O, C, K) weights")
    batch, channels, length = x.data.shape
    out_channels, in_channels, kernel = w.data.shape
    if channels != in_channels:
        raise ShapeError(
            f"conv1d channel mismatch: input has {channels}, weights expect {in_channels}"
        )
    if stride < 1:
        raise ShapeError("conv1d stride must be >= 1")
    padded = (
        np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    )
    padded_length = length + 2 * padding
    out_length = (padded_length - kernel) // stride + 1
    if out_length <= 0:
        raise ShapeError(
            f"conv1d kernel {kernel} does not fit signal of padded length {padded_length}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(padded, kernel, axis=2)
    windows = windows[:, :, ::stride, :]
    out_data = _einsum("bclk,ock->bol", windows, w.data)

    def backward(g):
        grad_w = _einsum("bol,bclk->ock", g, windows)
        # Each window position scatters its kernel-sized gradient back; the
        # k-loop walks the (small, odd) kernel once with strided adds.
        grad_window = _einsum("bol,ock->bckl", g, w.data)
        grad_padded = np.zeros((batch, channels, padded_length))
        for k in range(kernel):
            grad_padded[:, :, k : k + out_length * stride : stride] += grad_window[
                :, :, k, :
            ]
        grad_x = (
            grad_padded[:, :, padding : padded_length - padding]
            if padding
            else grad_padded
        )
        return grad_x, grad_w

    return Tensor(out_data, (x, w), backward, "conv1d")


def maxpool1d(x, width: int) -> Tensor:
    """Non-overlapping max pooling along the last axis; tail remainder is cropped.

    Ties resolve to the first maximal element, keeping evaluation deterministic.
    """
    x = _lift(x)
    if x.data.ndim != 3:
        raise ShapeError("maxpool1d expects (B, C, L) input")
    batch, channels, length = x.data.shape
    out_length = length // width
    if out_length == 0:
        raise ShapeError(f"maxpool1d width {width} exceeds signal length {length}")

    if width == 2:
        left = x.data[:, :, : out_length * 2 : 2]
        right = x.data[:, :, 1 : out_length * 2 : 2]
        take_left = left >= right
        out_data = np.where(take_left, left, right)

        def backward(g):
            grad = np.zeros((batch, channels, length))
            grad[:, :, : out_length * 2 : 2] = np.where(take_left, g, 0.0)
            grad[:, :, 1 : out_length * 2 : 2] = np.where(take_left, 0.0, g)
            return (grad,)

        return Tensor(out_data, (x,), backward, "maxpool1d")

    trimmed = x.data[:, :, : out_length * width].reshape(
        batch, channels, out_length, width
    )
    idx = trimmed.argmax(axis=3)
    out_data = np.take_along_axis(trimmed, idx[..., None], axis=3)[..., 0]

    def backward(g):
        grad_blocks = np.zeros((batch, channels, out_length, width))
        np.put_along_axis(grad_blocks, idx[..., None], g[..., None], axis=3)
        grad = np.zeros((batch, channels, length))
        grad[:, :, : out_length * width] = grad_blocks.reshape(
            batch, channels, out_length * width
        )
        return (grad,)

    return Tensor(out_data, (x,), backward, "maxpool1d")


def global_avg_pool(x) -> Tensor:
    """Mean over the length axis: (B, C, L) -> (B, C)."""
    x = _lift(x)
    if x.data.ndim != 3:
        raise ShapeError("global_avg_pool expects (B, C, L) input")
    batch, channels, length = x.data.shape
    out_data = x.data.mean(axis=2)

    def backward(g):
        return (np.broadcast_to(g[:, :, None] / length, x.data.shape).copy(),)

    return Tensor(out_data, (x,), backward, "global_avg_pool")


def softmax_temperature(logits, temperature: float) -> Tensor:
    """Row-wise softmax of logits divided by `temperature`, max-subtracted."""
    z = _lift(logits)
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if z.data.ndim != 2:
        raise ShapeError("softmax_temperature expects (B, N) logits")
    scaled = z.data / temperature
    scaled = scaled - scaled.max(axis=1, keepdims=True)
    expd = np.exp(scaled)
    probs = expd / expd.sum(axis=1, keepdims=True)

    def backward(g):
        inner = (g * probs).sum(axis=1, keepdims=True)
        return (probs * (g - inner) / temperature,)

    return Tensor(probs, (z,), backward, "softmax_temperature")


# -- graph facade ------------------------------------------------------------


@dataclass
class GradientBundle:
    """Loss value plus gradients for every parameter and input slot."""

    loss: float
    parameter_gradients: dict[str, np.ndarray]
    input_gradients: dict[str, np.ndarray]


class ComputeGraph:
    """A scalar loss as a pure function of named parameters and named inputs.

    `build` receives dicts of leaf tensors and must return a scalar Tensor;
    the recorded tape is acyclic and topologically ordered by construction.
    Evaluation is a pure function of (parameters, inputs), so disjoint
    evaluations may run in parallel; mutating `parameters` is single-writer.
    """

    def __init__(
        self,
        build: Callable[[dict[str, Tensor], dict[str, Tensor]], Tensor],
        parameters: dict[str, np.ndarray],
        input_slots: tuple[str, ...] | None = None,
    ):
        self.build = build
        self.parameters = {k: _as_array(v) for k, v in parameters.items()}
        self.input_slots = input_slots

    def _check_inputs(self, inputs: dict[str, np.ndarray]) -> None:
        if self.input_slots is not None:
            missing = set(self.input_slots) - set(inputs)
            if missing:
                raise ShapeError(f"unbound input slots: {sorted(missing)}")


def _forward(graph: ComputeGraph, inputs: dict[str, np.ndarray]):
    graph._check_inputs(inputs)
    param_tensors = {k: Tensor(v, op=f"param:{k}") for k, v in graph.parameters.items()}
    input_tensors = {k: Tensor(_as_array(v), op=f"input:{k}") for k, v in inputs.items()}
    loss = graph.build(param_tensors, input_tensors)
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ShapeError("graph build must return a scalar Tensor")
    return loss, param_tensors, input_tensors


def loss_value(graph: ComputeGraph, inputs: dict[str, np.ndarray]) -> float:
    """Forward evaluation only."""
    loss, _, _ = _forward(graph, inputs)
    return float(loss.data)


def evaluate_with_gradients(
    graph: ComputeGraph, inputs: dict[str, np.ndarray]
) -> GradientBundle:
    """Evaluate the loss and return exact reverse-mode gradients.

    Raises NonFiniteError naming the first tape node whose output is not
    finite, and ShapeError for inconsistent shapes or unbound inputs.
    """
    loss, param_tensors, input_tensors = _forward(graph, inputs)
    order = loss.topo_order()
    for position, node in enumerate(order):
        if not np.all(np.isfinite(node.data)):
            raise NonFiniteError(
                f"node {position} ({node.op}) produced non-finite values"
            )
    loss.backward()
    param_grads = {
        k: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for k, t in param_tensors.items()
    }
    input_grads = {
        k: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for k, t in input_tensors.items()
    }
    for name, grad in {**param_grads, **input_grads}.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"gradient of {name!r} is non-finite")
    return GradientBundle(float(loss.data), param_grads, input_grads)


def finite_difference_check(
    graph: ComputeGraph,
    inputs: dict[str, np.ndarray],
    step: float,
    floor: float = 1e-3,
    coordinate_limit: int | None = None,
    seed: int = 0,
    skip_nonsmooth: bool = False,
) -> float:
    """Max relative error between analytic gradients and central differences.

    Error per coordinate is |analytic - fd| / max(|analytic|, floor). The
    loss must be twice differentiable near the probe point; a probe across a
    ReLU kink or a pooling tie is non-comparable by construction. With
    `skip_nonsmooth`, each coordinate is probed at the step and half the
    step, and coordinates whose two difference quotients disagree are
    dropped as non-smooth; a wrong analytic gradient stays step-consistent
    and is still caught. With `coordinate_limit`, at most that many
    coordinates per array are probed (chosen deterministically from `seed`);
    otherwise every coordinate is.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    bundle = evaluate_with_gradients(graph, inputs)
    inputs = {k: _as_array(v).copy() for k, v in inputs.items()}
    rng = np.random.default_rng(seed)

    def central(flat: np.ndarray, j: int, h: float) -> float:
        original = flat[j]
        flat[j] = original + h
        up = loss_value(graph, inputs)
        flat[j] = original - h
        down = loss_value(graph, inputs)
        flat[j] = original
        return (up - down) / (2.0 * h)

    def probe(array: np.ndarray, analytic: np.ndarray) -> float:
        flat = array.reshape(-1)
        coords = np.arange(flat.size)
        if coordinate_limit is not None and flat.size > coordinate_limit:
            coords = rng.choice(flat.size, size=coordinate_limit, replace=False)
        worst = 0.0
        analytic_flat = analytic.reshape(-1)
        for j in coords:
            fd = central(flat, j, step)
            if skip_nonsmooth:
                # A kink inside the probe interval biases the quotient by
                # O(step) while smooth truncation shrinks 4x at half step,
                # so step-inconsistency beyond ~2e-5 marks non-smoothness.
                fd_half = central(flat, j, step / 2.0)
                scale = max(abs(fd), abs(analytic_flat[j]), floor)
                if abs(fd - fd_half) > 2e-5 * scale:
                    continue
            err = abs(analytic_flat[j] - fd) / max(abs(analytic_flat[j]), floor)
            worst = max(worst, err)
        return worst

    worst = 0.0
    for name, grad in bundle.parameter_gradients.items():
        worst = max(worst, probe(graph.parameters[name], grad))
    for name, grad in bundle.input_gradients.items():
        worst = max(worst, probe(inputs[name], grad))
    return worst
