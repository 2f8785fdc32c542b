"""Minimal feedforward neural-network engine.

Networks are small directed graphs of named layers (dense, 2-D convolution,
flatten, reshape, concatenate, activation, dropout, nearest-neighbour
upsampling) evaluated on batch-first numpy arrays. Images are laid out as
``(batch, height, width, channels)``.

The engine provides forward evaluation, backpropagation for the mean squared
error, global-norm gradient clipping and seeded mini-batch SGD. It is the
substrate for both the dataset encoders and the core network.

Examples:
    >>> import numpy as np
    >>> spec = NetworkSpec(input_shapes=((2,),), layers=(dense("fc", 2, 2),))
    >>> params = NetworkParams({"fc": ParamPair(np.eye(2), np.zeros(2))})
    >>> forward(spec, params, np.array([0.3, -0.7])).tolist()
    [0.3, -0.7]
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import NonFiniteLossError, ShapeError, TrainingDivergedError
from .logging import get_logger

logger = get_logger("nn_engine")

LAYER_KINDS = frozenset(
    {"dense", "conv2d", "flatten", "concat", "activation", "dropout", "upsample2d", "reshape"}
)
ACTIVATIONS = frozenset({"tanh", "elu", "relu", "sigmoid"})
LOSSES = frozenset({"mse"})

Shape = tuple[int, ...]
Inputs = np.ndarray | Sequence[np.ndarray]


@dataclass(frozen=True)
class LayerSpec:
    """One node of a network graph.

    ``inputs`` names the upstream nodes (network inputs or earlier layers).
    Left empty, the layer consumes the previous layer, or the first network
    input when it is the first layer. Only the attributes of ``kind`` are
    meaningful; use the constructor helpers (:func:`dense`, :func:`conv2d`,
    ...) rather than building specs by hand.
    """

    name: str
    kind: str
    inputs: tuple[str, ...] = ()
    in_dim: int = 0
    out_dim: int = 0
    kernel_h: int = 1
    kernel_w: int = 1
    in_channels: int = 0
    out_channels: int = 0
    stride: int = 1
    activation: str = ""
    rate: float = 0.0
    factor: int = 1
    shape: Shape = ()

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ShapeError(self.name, f"unknown layer kind '{self.kind}'")
        if self.kind == "activation" and self.activation not in ACTIVATIONS:
            raise ShapeError(self.name, f"unknown activation '{self.activation}'")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ShapeError(self.name, f"dropout rate must lie in [0, 1), got {self.rate}")
        if self.kind == "conv2d" and self.stride < 1:
            raise ShapeError(self.name, f"stride must be >= 1, got {self.stride}")
        if self.kind == "upsample2d" and self.factor < 1:
            raise ShapeError(self.name, f"upsample factor must be >= 1, got {self.factor}")

    @property
    def parametric(self) -> bool:
        """Whether the layer owns a weight and a bias."""
        return self.kind in ("dense", "conv2d")

    @property
    def padding(self) -> tuple[int, int]:
        """Zero padding applied on each side of a convolution input."""
        return (self.kernel_h - 1) // 2, (self.kernel_w - 1) // 2

    @property
    def fan_in(self) -> int:
        if self.kind == "dense":
            return self.in_dim
        return self.in_channels * self.kernel_h * self.kernel_w

    def weight_shape(self) -> Shape:
        if self.kind == "dense":
            return (self.out_dim, self.in_dim)
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    def bias_shape(self) -> Shape:
        return (self.out_dim,) if self.kind == "dense" else (self.out_channels,)


def dense(name: str, in_dim: int, out_dim: int, inputs: Sequence[str] = ()) -> LayerSpec:
    """Fully connected layer ``y = x W^T + b`` with ``W`` of shape (out, in)."""
    return LayerSpec(name, "dense", tuple(inputs), in_dim=in_dim, out_dim=out_dim)


def conv2d(
    name: str,
    in_channels: int,
    out_channels: int,
    kernel: int | tuple[int, int] = 3,
    stride: int = 1,
    inputs: Sequence[str] = (),
) -> LayerSpec:
    """2-D convolution with ``(k - 1) // 2`` zero padding per side."""
    kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
    return LayerSpec(
        name,
        "conv2d",
        tuple(inputs),
        kernel_h=kh,
        kernel_w=kw,
        in_channels=in_channels,
        out_channels=out_channels,
        stride=stride,
    )


def flatten(name: str, inputs: Sequence[str] = ()) -> LayerSpec:
    return LayerSpec(name, "flatten", tuple(inputs))


def reshape(name: str, shape: Sequence[int], inputs: Sequence[str] = ()) -> LayerSpec:
    return LayerSpec(name, "reshape", tuple(inputs), shape=tuple(shape))


def concat(name: str, inputs: Sequence[str]) -> LayerSpec:
    """Join 1-D branch outputs along the feature axis, in ``inputs`` order."""
    return LayerSpec(name, "concat", tuple(inputs))


def activation(name: str, fn: str, inputs: Sequence[str] = ()) -> LayerSpec:
    return LayerSpec(name, "activation", tuple(inputs), activation=fn)


def dropout(name: str, rate: float, inputs: Sequence[str] = ()) -> LayerSpec:
    return LayerSpec(name, "dropout", tuple(inputs), rate=rate)


def upsample2d(name: str, factor: int, inputs: Sequence[str] = ()) -> LayerSpec:
    """Nearest-neighbour upsampling of both spatial axes."""
    return LayerSpec(name, "upsample2d", tuple(inputs), factor=factor)


@dataclass(frozen=True)
class NetworkSpec:
    """A network graph: named inputs, layers in topological order, one output.

    Args:
        input_shapes: Per-sample shape of every network input.
        layers: Layers in evaluation order.
        input_names: Names of the inputs (defaults to ``input0``, ``input1``...).
        output: Name of the output layer (defaults to the last layer).

    Raises:
        ShapeError: If the graph references unknown nodes, leaves a node
            disconnected from the output, or shapes do not propagate.
    """

    input_shapes: tuple[Shape, ...]
    layers: tuple[LayerSpec, ...]
    input_names: tuple[str, ...] = ()
    output: str = ""

    def __post_init__(self) -> None:
        if not self.input_shapes:
            raise ShapeError("<input>", "a network needs at least one input")
        if not self.layers:
            raise ShapeError("<output>", "a network needs at least one layer")
        if not self.input_names:
            names = tuple(f"input{i}" for i in range(len(self.input_shapes)))
            object.__setattr__(self, "input_names", names)
        if len(self.input_names) != len(self.input_shapes):
            raise ShapeError("<input>", "input_names and input_shapes differ in length")
        if not self.output:
            object.__setattr__(self, "output", self.layers[-1].name)
        self._check_graph()
        # Shape inference raises on the first inconsistent layer.
        _ = self.shapes

    @cached_property
    def sources(self) -> dict[str, tuple[str, ...]]:
        """Resolved upstream node names of every layer."""
        resolved: dict[str, tuple[str, ...]] = {}
        previous = self.input_names[0]
        for layer in self.layers:
            resolved[layer.name] = layer.inputs or (previous,)
            previous = layer.name
        return resolved

    @cached_property
    def shapes(self) -> dict[str, Shape]:
        """Per-sample output shape of every input and layer."""
        return infer_shapes(self)

    @property
    def output_shape(self) -> Shape:
        return self.shapes[self.output]

    @property
    def parametric_layers(self) -> tuple[LayerSpec, ...]:
        return tuple(layer for layer in self.layers if layer.parametric)

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def _check_graph(self) -> None:
        known: set[str] = set(self.input_names)
        if len(known) != len(self.input_names):
            raise ShapeError("<input>", "duplicate input names")
        consumed: set[str] = set()
        for layer in self.layers:
            if layer.name in known:
                raise ShapeError(layer.name, "duplicate node name")
            for src in self.sources[layer.name]:
                if src not in known:
                    raise ShapeError(layer.name, f"unknown or later input '{src}'")
                consumed.add(src)
            known.add(layer.name)
        if self.output not in known or self.output in self.input_names:
            raise ShapeError(self.output, "output must name a layer")
        dangling = sorted(known - consumed - {self.output})
        if dangling:
            raise ShapeError(dangling[0], "node does not reach the network output")


def infer_shapes(spec: NetworkSpec) -> dict[str, Shape]:
    """Propagate per-sample shapes through ``spec``.

    Raises:
        ShapeError: Naming the first layer whose inputs do not fit.
    """
    shapes: dict[str, Shape] = dict(zip(spec.input_names, spec.input_shapes, strict=True))
    for layer in spec.layers:
        ins = [shapes[src] for src in spec.sources[layer.name]]
        shapes[layer.name] = _layer_output_shape(layer, ins)
    return shapes


def _layer_output_shape(layer: LayerSpec, ins: list[Shape]) -> Shape:
    if layer.kind != "concat" and len(ins) != 1:
        raise ShapeError(layer.name, f"expects one input, got {len(ins)}")
    first = ins[0]
    if layer.kind == "dense":
        if first != (layer.in_dim,):
            raise ShapeError(layer.name, f"expects input ({layer.in_dim},), got {first}")
        return (layer.out_dim,)
    if layer.kind == "conv2d":
        if len(first) != 3 or first[2] != layer.in_channels:
            raise ShapeError(
                layer.name, f"expects (H, W, {layer.in_channels}) input, got {first}"
            )
        ph, pw = layer.padding
        out_h = (first[0] + 2 * ph - layer.kernel_h) // layer.stride + 1
        out_w = (first[1] + 2 * pw - layer.kernel_w) // layer.stride + 1
        if out_h < 1 or out_w < 1:
            raise ShapeError(layer.name, f"input {first} smaller than kernel")
        return (out_h, out_w, layer.out_channels)
    if layer.kind == "flatten":
        return (math.prod(first),)
    if layer.kind == "reshape":
        if math.prod(first) != math.prod(layer.shape):
            raise ShapeError(layer.name, f"cannot reshape {first} to {layer.shape}")
        return layer.shape
    if layer.kind == "concat":
        if any(len(s) != 1 for s in ins):
            raise ShapeError(layer.name, f"concatenates 1-D inputs only, got {ins}")
        return (sum(s[0] for s in ins),)
    if layer.kind == "upsample2d":
        if len(first) != 3:
            raise ShapeError(layer.name, f"expects (H, W, C) input, got {first}")
        return (first[0] * layer.factor, first[1] * layer.factor, first[2])
    return first


class ParamPair(NamedTuple):
    """Weight and bias of one parametric layer."""

    weight: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True)
class NetworkParams:
    """Parameters of every parametric layer, keyed by layer name.

    The same container holds gradients. Instances are treated as immutable:
    every arithmetic helper returns a new object.
    """

    layers: dict[str, ParamPair] = field(default_factory=dict)

    def __iter__(self) -> Iterator[str]:
        return iter(self.layers)

    def __getitem__(self, name: str) -> ParamPair:
        return self.layers[name]

    def arrays(self) -> Iterator[np.ndarray]:
        for pair in self.layers.values():
            yield pair.weight
            yield pair.bias

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> NetworkParams:
        return NetworkParams(
            {name: ParamPair(fn(p.weight), fn(p.bias)) for name, p in self.layers.items()}
        )

    def combine(
        self, other: NetworkParams, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    ) -> NetworkParams:
        return NetworkParams(
            {
                name: ParamPair(fn(p.weight, other[name].weight), fn(p.bias, other[name].bias))
                for name, p in self.layers.items()
            }
        )

    def flat(self) -> np.ndarray:
        """All entries as one vector, in layer order (weight then bias)."""
        parts = [a.ravel() for a in self.arrays()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(a))) for a in self.arrays())

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())


def init_params(spec: NetworkSpec, seed: int | np.random.Generator = 0) -> NetworkParams:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialization, seeded.

    Biases share the weight range. Passing the same integer seed (or a fresh
    generator built from it) always yields bit-identical parameters.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers: dict[str, ParamPair] = {}
    for layer in spec.parametric_layers:
        bound = 1.0 / math.sqrt(max(layer.fan_in, 1))
        weight = rng.uniform(-bound, bound, size=layer.weight_shape())
        bias = rng.uniform(-bound, bound, size=layer.bias_shape())
        layers[layer.name] = ParamPair(weight, bias)
    return NetworkParams(layers)


# --------------------------------------------------------------------------
# layer kernels


def _forward_layer(
    layer: LayerSpec,
    xs: list[np.ndarray],
    pair: ParamPair | None,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, Any]:
    x = xs[0]
    kind = layer.kind
    if kind == "dense":
        assert pair is not None
        return x @ pair.weight.T + pair.bias, x
    if kind == "conv2d":
        assert pair is not None
        cols, out_h, out_w = _im2col(x, layer)
        w2d = pair.weight.reshape(layer.out_channels, -1)
        y = cols @ w2d.T + pair.bias
        return y.reshape(x.shape[0], out_h, out_w, layer.out_channels), (cols, x.shape)
    if kind in ("flatten", "reshape"):
        target = (-1,) if kind == "flatten" else layer.shape
        return x.reshape(x.shape[0], *target), x.shape
    if kind == "concat":
        return np.concatenate(xs, axis=1), [a.shape[1] for a in xs]
    if kind == "activation":
        y = _activate(layer.activation, x)
        return y, (x, y)
    if kind == "dropout":
        if rng is None or layer.rate == 0.0:
            return x, None
        mask = (rng.random(x.shape) >= layer.rate) / (1.0 - layer.rate)
        return x * mask, mask
    # upsample2d
    f = layer.factor
    return x.repeat(f, axis=1).repeat(f, axis=2), x.shape


def _backward_layer(
    layer: LayerSpec, dy: np.ndarray, cache: Any, pair: ParamPair | None
) -> tuple[list[np.ndarray], ParamPair | None]:
    kind = layer.kind
    if kind == "dense":
        assert pair is not None
        x = cache
        return [dy @ pair.weight], ParamPair(dy.T @ x, dy.sum(axis=0))
    if kind == "conv2d":
        assert pair is not None
        cols, x_shape = cache
        d2 = dy.reshape(-1, layer.out_channels)
        w2d = pair.weight.reshape(layer.out_channels, -1)
        grad = ParamPair((d2.T @ cols).reshape(pair.weight.shape), d2.sum(axis=0))
        return [_col2im(d2 @ w2d, x_shape, dy.shape[1], dy.shape[2], layer)], grad
    if kind in ("flatten", "reshape"):
        return [dy.reshape(cache)], None
    if kind == "concat":
        return split_concat(dy, cache), None
    if kind == "activation":
        x, y = cache
        return [dy * _activation_slope(layer.activation, x, y)], None
    if kind == "dropout":
        return [dy if cache is None else dy * cache], None
    n, h, w, c = cache
    f = layer.factor
    return [dy.reshape(n, h, f, w, f, c).sum(axis=(2, 4))], None


def _im2col(x: np.ndarray, layer: LayerSpec) -> tuple[np.ndarray, int, int]:
    ph, pw = layer.padding
    padded = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    s = layer.stride
    # (N, H', W', C, kh, kw) after striding over window origins.
    windows = sliding_window_view(padded, (layer.kernel_h, layer.kernel_w), axis=(1, 2))
    windows = windows[:, ::s, ::s]
    out_h, out_w = windows.shape[1], windows.shape[2]
    return windows.reshape(x.shape[0] * out_h * out_w, -1), out_h, out_w


def _col2im(
    dcols: np.ndarray, x_shape: Shape, out_h: int, out_w: int, layer: LayerSpec
) -> np.ndarray:
    n, h, w, c = x_shape
    ph, pw = layer.padding
    s = layer.stride
    kh, kw = layer.kernel_h, layer.kernel_w
    patches = dcols.reshape(n, out_h, out_w, c, kh, kw)
    dpadded = np.zeros((n, h + 2 * ph, w + 2 * pw, c))
    for i in range(kh):
        for j in range(kw):
            dpadded[:, i : i + s * (out_h - 1) + 1 : s, j : j + s * (out_w - 1) + 1 : s, :] += (
                patches[..., i, j]
            )
    return dpadded[:, ph : ph + h, pw : pw + w, :]


def _activate(fn: str, x: np.ndarray) -> np.ndarray:
    if fn == "tanh":
        return np.tanh(x)
    if fn == "relu":
        return np.maximum(x, 0.0)
    if fn == "sigmoid":
        return expit(x)
    # ELU with alpha = 1
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _activation_slope(fn: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if fn == "tanh":
        return 1.0 - y * y
    if fn == "relu":
        return (x > 0).astype(x.dtype)
    if fn == "sigmoid":
        return y * (1.0 - y)
    return np.where(x > 0, 1.0, y + 1.0)


def split_concat(tensor: np.ndarray, widths: Sequence[int]) -> list[np.ndarray]:
    """Undo a concat layer given the recorded branch widths.

    >>> import numpy as np
    >>> [part.tolist() for part in split_concat(np.array([[1.0, 2.0, 3.0]]), [2, 1])]
    [[[1.0, 2.0]], [[3.0]]]
    """
    offsets = np.cumsum(widths)[:-1]
    return list(np.split(tensor, offsets, axis=1))


# --------------------------------------------------------------------------
# graph evaluation


def _prepare_inputs(spec: NetworkSpec, inputs: Inputs) -> tuple[list[np.ndarray], bool]:
    arrays = [inputs] if isinstance(inputs, np.ndarray) else list(inputs)
    if len(arrays) != len(spec.input_shapes):
        raise ShapeError(
            "<input>", f"network takes {len(spec.input_shapes)} inputs, got {len(arrays)}"
        )
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    unbatched = all(
        a.shape == shape for a, shape in zip(arrays, spec.input_shapes, strict=True)
    )
    if unbatched:
        return [a[np.newaxis] for a in arrays], True
    for name, a, shape in zip(spec.input_names, arrays, spec.input_shapes, strict=True):
        if a.shape[1:] != shape:
            raise ShapeError(name, f"expects per-sample shape {shape}, got {a.shape[1:]}")
    if len({a.shape[0] for a in arrays}) != 1:
        raise ShapeError("<input>", "inputs disagree on batch size")
    return arrays, False


def _run(
    spec: NetworkSpec,
    params: NetworkParams,
    arrays: list[np.ndarray],
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, dict[str, Any]]:
    values: dict[str, np.ndarray] = dict(zip(spec.input_names, arrays, strict=True))
    caches: dict[str, Any] = {}
    for layer in spec.layers:
        xs = [values[src] for src in spec.sources[layer.name]]
        pair = params.layers.get(layer.name) if layer.parametric else None
        if layer.parametric and pair is None:
            raise ShapeError(layer.name, "no parameters supplied")
        values[layer.name], caches[layer.name] = _forward_layer(layer, xs, pair, rng)
    return values[spec.output], caches


def forward(spec: NetworkSpec, params: NetworkParams, inputs: Inputs) -> np.ndarray:
    """Evaluate the network in inference mode (dropout disabled).

    Args:
        spec: Network graph.
        params: Parameters for every parametric layer.
        inputs: One array per network input, batch-first. A single unbatched
            sample is accepted too and yields an unbatched output.

    Returns:
        The output tensor.

    Raises:
        ShapeError: If an input does not match ``spec.input_shapes``.
    """
    arrays, unbatched = _prepare_inputs(spec, inputs)
    out, _ = _run(spec, params, arrays, rng=None)
    return out[0] if unbatched else out


def mse(prediction: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over every element."""
    return float(np.mean((prediction - target) ** 2))


def evaluate_loss(
    spec: NetworkSpec,
    params: NetworkParams,
    batch: tuple[Inputs, np.ndarray],
    loss: str = "mse",
    dropout_rng: np.random.Generator | None = None,
) -> float:
    """Loss of ``params`` on ``batch``; training mode iff ``dropout_rng`` is given."""
    _check_loss(loss)
    arrays, _ = _prepare_inputs(spec, batch[0])
    out, _ = _run(spec, params, arrays, dropout_rng)
    return mse(out, np.asarray(batch[1], dtype=np.float64).reshape(out.shape))


def backward(
    spec: NetworkSpec,
    params: NetworkParams,
    batch: tuple[Inputs, np.ndarray],
    loss: str = "mse",
    *,
    dropout_rng: np.random.Generator | None = None,
    batch_index: int = 0,
) -> tuple[NetworkParams, float]:
    """Gradients of the batch loss with respect to every parameter.

    Args:
        spec: Network graph.
        params: Current parameters.
        batch: ``(inputs, targets)``; targets are reshaped to the output shape.
        loss: Loss name; only ``"mse"`` is defined.
        dropout_rng: When given, dropout layers sample masks from it
            (training mode); otherwise dropout is the identity.
        batch_index: Reported by :class:`NonFiniteLossError`.

    Returns:
        ``(gradients, loss_value)``; gradients mirror ``params``.

    Raises:
        NonFiniteLossError: If the loss is NaN or infinite.
    """
    _check_loss(loss)
    arrays, _ = _prepare_inputs(spec, batch[0])
    if arrays[0].shape[0] == 0:
        raise ShapeError("<input>", "empty batch")
    out, caches = _run(spec, params, arrays, dropout_rng)
    target = np.asarray(batch[1], dtype=np.float64).reshape(out.shape)
    value = mse(out, target)
    if not math.isfinite(value):
        raise NonFiniteLossError(batch_index, value)

    upstream: dict[str, np.ndarray] = {spec.output: 2.0 * (out - target) / out.size}
    grads: dict[str, ParamPair] = {}
    for layer in reversed(spec.layers):
        dy = upstream.pop(layer.name)
        pair = params.layers.get(layer.name)
        dxs, grad = _backward_layer(layer, dy, caches[layer.name], pair)
        if grad is not None:
            grads[layer.name] = grad
        for src, dx in zip(spec.sources[layer.name], dxs, strict=True):
            upstream[src] = upstream[src] + dx if src in upstream else dx
    ordered = {name: grads[name] for name in params.layers}
    return NetworkParams(ordered), value


def _check_loss(loss: str) -> None:
    if loss not in LOSSES:
        raise ValueError(f"unknown loss '{loss}'")


def global_norm(grads: NetworkParams | np.ndarray) -> float:
    """L2 norm over every gradient entry."""
    if isinstance(grads, np.ndarray):
        return float(np.linalg.norm(grads))
    return math.sqrt(sum(float(np.sum(a * a)) for a in grads.arrays()))


def clip_gradients(grads: NetworkParams | np.ndarray, clip_norm: float) -> Any:
    """Rescale ``grads`` so their global L2 norm is at most ``clip_norm``.

    Gradients already within the bound are returned unchanged.

    >>> import numpy as np
    >>> clip_gradients(np.array([3.0, 4.0]), 1.0).round(12).tolist()
    [0.6, 0.8]
    """
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    norm = global_norm(grads)
    if norm <= clip_norm:
        return grads
    scale = clip_norm / norm
    if isinstance(grads, np.ndarray):
        return grads * scale
    return grads.map(lambda a: a * scale)


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch SGD settings.

    ``batch_size`` larger than the training set is reduced to the set size.
    """

    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 32
    clip_norm: float | None = None
    seed: int = 0
    loss: str = "mse"

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")
        _check_loss(self.loss)


StepHook = Callable[[int, int, NetworkParams], None]


@dataclass(frozen=True)
class TrainResult:
    """Outcome of :func:`train`."""

    params: NetworkParams
    loss_history: list[float]
    validation_history: list[float]
    initial_loss: float

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1] if self.loss_history else self.initial_loss


def train(
    spec: NetworkSpec,
    config: TrainConfig,
    data: tuple[Inputs, np.ndarray],
    *,
    validation: tuple[Inputs, np.ndarray] | None = None,
    on_step: StepHook | None = None,
    initial: NetworkParams | None = None,
) -> TrainResult:
    """Fit ``spec`` to ``data`` with seeded mini-batch SGD.

    One generator seeded with ``config.seed`` drives initialization, epoch
    shuffles and dropout masks in that order, so equal configs give
    bit-identical results. ``loss_history[e]`` is the inference-mode loss on
    the full training set after epoch ``e``.

    Args:
        spec: Network graph.
        config: Optimizer settings.
        data: ``(inputs, targets)``.
        validation: Optional held-out ``(inputs, targets)``, scored per epoch.
        on_step: Called as ``on_step(epoch, batch_index, grads)`` with every
            gradient actually applied (after clipping).
        initial: Start from these parameters instead of a fresh init.

    Raises:
        TrainingDivergedError: If a loss becomes non-finite.
    """
    rng = np.random.default_rng(config.seed)
    params = initial if initial is not None else init_params(spec, rng)
    arrays, _ = _prepare_inputs(spec, data[0])
    targets = np.asarray(data[1], dtype=np.float64)
    n = targets.shape[0]
    if n == 0:
        raise ShapeError("<input>", "training data is empty")
    batch_size = min(config.batch_size, n)
    initial_loss = evaluate_loss(spec, params, (arrays, targets))

    history: list[float] = []
    val_history: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[start : start + batch_size]
            batch = ([a[idx] for a in arrays], targets[idx])
            try:
                grads, _ = backward(
                    spec, params, batch, config.loss, dropout_rng=rng, batch_index=b
                )
            except NonFiniteLossError as exc:
                raise TrainingDivergedError(epoch, history, str(exc)) from exc
            if config.clip_norm is not None:
                grads = clip_gradients(grads, config.clip_norm)
            if on_step is not None:
                on_step(epoch, b, grads)
            lr = config.learning_rate
            params = params.combine(grads, lambda p, g: p - lr * g)
        epoch_loss = evaluate_loss(spec, params, (arrays, targets))
        if not math.isfinite(epoch_loss) or not params.is_finite():
            raise TrainingDivergedError(epoch, history, f"loss {epoch_loss!r}")
        history.append(epoch_loss)
        if validation is not None:
            val_history.append(evaluate_loss(spec, params, validation))
        logger.debug(f"epoch {epoch}: loss={epoch_loss:.6g}")
    return TrainResult(params, history, val_history, initial_loss)
