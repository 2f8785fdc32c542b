"""Network parameter embeddings (NPE): datasets encoded as encoder weights.

A dataset is encoded by training a small autoencoder on its rows, attributes
and one-hot label jointly, and exporting the parameters of the encoder half.
Each parametric encoder layer becomes one matrix of shape
``(out, in + 1)``: the weight (convolution kernels flattened per output
channel) with the bias appended as the last column.

Two variants share one :class:`EncoderSpec`:

* ``table_npe``: fully connected encoder/decoder over
  ``features ++ one_hot(label)``.
* ``image_npe``: strided convolutions, flatten, concat with the one-hot
  label, dense bottleneck; the decoder rebuilds the picture with
  upsample + convolution and the label with a separate dense head.

Parametric layers belonging to the encoder are the ones whose name starts
with ``enc``; matrices are exported in graph order.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from .datasets import Dataset, ImageDataset, TabularDataset, one_hot
from .errors import ShapeError
from .logging import get_logger
from .nn_engine import (
    LayerSpec,
    NetworkParams,
    NetworkSpec,
    TrainConfig,
    activation,
    concat,
    conv2d,
    dense,
    flatten,
    reshape,
    train,
    upsample2d,
)

logger = get_logger("npe")

VARIANTS = ("table_npe", "image_npe")
ENCODER_PREFIX = "enc"


def _default_encoder_train() -> TrainConfig:
    return TrainConfig(learning_rate=0.05, epochs=60, batch_size=16)


@dataclass(frozen=True)
class EncoderSpec:
    """Topology and training budget of the dataset autoencoder.

    Attributes:
        variant: ``"table_npe"`` or ``"image_npe"``.
        hidden_widths: Encoder hidden widths for ``table_npe``, outermost
            first (the decoder mirrors them). ``None`` selects
            ``ceil(input / 2)`` when that is wider than the bottleneck, and no
            hidden layer otherwise.
        bottleneck_dim: Width of the code layer.
        conv_channels: Output channels of each ``image_npe`` convolution.
        kernel: Convolution kernel size (``image_npe``).
        stride: Convolution stride (``image_npe``).
        train: Optimizer settings, shared by every dataset of a run.
    """

    variant: str = "table_npe"
    hidden_widths: tuple[int, ...] | None = None
    bottleneck_dim: int = 3
    conv_channels: tuple[int, ...] = (4, 8)
    kernel: int = 3
    stride: int = 2
    train: TrainConfig = field(default_factory=_default_encoder_train)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown encoder variant '{self.variant}'")
        if self.bottleneck_dim < 1:
            raise ValueError("bottleneck_dim must be positive")
        if self.hidden_widths is not None and any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")
        if self.kernel < 1 or self.stride < 1:
            raise ValueError("kernel and stride must be positive")

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["hidden_widths"] = None if self.hidden_widths is None else list(self.hidden_widths)
        doc["conv_channels"] = list(self.conv_channels)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> EncoderSpec:
        values = dict(doc)
        if values.get("hidden_widths") is not None:
            values["hidden_widths"] = tuple(values["hidden_widths"])
        if "conv_channels" in values:
            values["conv_channels"] = tuple(values["conv_channels"])
        if "train" in values:
            values["train"] = TrainConfig(**values["train"])
        return cls(**values)


def geometry_of(dataset: Dataset) -> dict[str, Any]:
    """Input geometry that, with an :class:`EncoderSpec`, fixes the encoder's shape."""
    if isinstance(dataset, ImageDataset):
        return {"image_shape": list(dataset.image_shape), "n_classes": dataset.n_classes}
    return {"n_features": dataset.n_features, "n_classes": dataset.n_classes}


def encoder_fingerprint(spec: EncoderSpec, geometry: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON of ``spec`` and the input geometry."""
    payload = json.dumps({"spec": spec.to_dict(), "geometry": dict(geometry)}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _dense_block(name: str, in_dim: int, out_dim: int, fn: str, src: str = "") -> list[LayerSpec]:
    inputs = (src,) if src else ()
    layers = [dense(name, in_dim, out_dim, inputs)]
    if fn:
        layers.append(activation(f"{name}_{fn}", fn))
    return layers


def build_table_npe(spec: EncoderSpec, n_features: int, n_classes: int) -> NetworkSpec:
    """Symmetric fully connected autoencoder over ``features ++ one_hot(label)``.

    Hidden and code layers use tanh; the reconstruction is linear.

    >>> net = build_table_npe(EncoderSpec(bottleneck_dim=3), n_features=4, n_classes=2)
    >>> [(layer.in_dim, layer.out_dim) for layer in net.parametric_layers]
    [(6, 3), (3, 6)]

    Raises:
        ShapeError: If the bottleneck is not narrower than the input.
        ValueError: On a wrong variant or empty feature/class counts.
    """
    if spec.variant != "table_npe":
        raise ValueError(f"build_table_npe needs variant table_npe, got {spec.variant}")
    if n_classes < 1 or n_features < 1:
        raise ValueError("n_features and n_classes must be positive")
    width = n_features + n_classes
    if spec.bottleneck_dim >= width:
        raise ShapeError(
            "enc_code", f"bottleneck {spec.bottleneck_dim} must be below input width {width}"
        )
    if spec.hidden_widths is None:
        half = math.ceil(width / 2)
        hidden: tuple[int, ...] = (half,) if half > spec.bottleneck_dim else ()
    else:
        hidden = spec.hidden_widths

    layers: list[LayerSpec] = []
    widths = (width, *hidden, spec.bottleneck_dim)
    for i, (a, b) in enumerate(zip(widths, widths[1:], strict=False)):
        name = "enc_code" if i == len(widths) - 2 else f"enc{i}"
        layers += _dense_block(name, a, b, "tanh")
    back = widths[::-1]
    for i, (a, b) in enumerate(zip(back, back[1:], strict=False)):
        last = i == len(back) - 2
        layers += _dense_block("dec_out" if last else f"dec{i}", a, b, "" if last else "tanh")
    return NetworkSpec(input_shapes=((width,),), layers=tuple(layers), input_names=("joint",))


def build_image_npe(
    spec: EncoderSpec, height: int, width: int, channels: int, n_classes: int
) -> NetworkSpec:
    """Convolutional autoencoder with a jointly encoded label.

    Inputs are ``image`` ``(H, W, C)`` and ``label`` (one-hot). The output is
    ``flatten(reconstructed image) ++ label head``; the reconstructed image
    itself is the node ``dec_image``.

    Raises:
        ShapeError: If ``H`` or ``W`` is not divisible by the total stride.
    """
    if spec.variant != "image_npe":
        raise ValueError(f"build_image_npe needs variant image_npe, got {spec.variant}")
    if n_classes < 1:
        raise ValueError("n_classes must be positive")
    if not spec.conv_channels:
        raise ValueError("image_npe needs at least one convolution")
    total = spec.stride ** len(spec.conv_channels)
    if height % total or width % total:
        raise ShapeError(
            "enc_conv0", f"image {height}x{width} not divisible by total stride {total}"
        )
    h, w = height // total, width // total
    channel_chain = (channels, *spec.conv_channels)

    layers: list[LayerSpec] = []
    src = "image"
    for i, (c_in, c_out) in enumerate(zip(channel_chain, channel_chain[1:], strict=False)):
        layers.append(conv2d(f"enc_conv{i}", c_in, c_out, spec.kernel, spec.stride, (src,)))
        layers.append(activation(f"enc_conv{i}_relu", "relu"))
        src = f"enc_conv{i}_relu"
    flat_dim = h * w * channel_chain[-1]
    layers.append(flatten("enc_flat"))
    layers.append(concat("enc_join", ("enc_flat", "label")))
    layers += _dense_block("enc_code", flat_dim + n_classes, spec.bottleneck_dim, "tanh")

    layers += _dense_block("dec_fc", spec.bottleneck_dim, flat_dim, "relu", "enc_code_tanh")
    layers.append(reshape("dec_reshape", (h, w, channel_chain[-1])))
    for step, i in enumerate(reversed(range(len(spec.conv_channels)))):
        layers.append(upsample2d(f"dec_up{step}", spec.stride))
        layers.append(
            conv2d(f"dec_conv{step}", channel_chain[i + 1], channel_chain[i], spec.kernel, 1)
        )
        last = i == 0
        name = "dec_image" if last else f"dec_conv{step}_relu"
        layers.append(activation(name, "sigmoid" if last else "relu"))
    layers.append(flatten("dec_flat"))
    layers += _dense_block("dec_label", spec.bottleneck_dim, n_classes, "sigmoid", "enc_code_tanh")
    layers.append(concat("dec_out", ("dec_flat", "dec_label_sigmoid")))
    return NetworkSpec(
        input_shapes=((height, width, channels), (n_classes,)),
        layers=tuple(layers),
        input_names=("image", "label"),
    )


def build_encoder_network(spec: EncoderSpec, geometry: Mapping[str, Any]) -> NetworkSpec:
    """Autoencoder for a dataset of the given :func:`geometry_of`."""
    if spec.variant == "image_npe":
        h, w, c = geometry["image_shape"]
        return build_image_npe(spec, int(h), int(w), int(c), int(geometry["n_classes"]))
    return build_table_npe(spec, int(geometry["n_features"]), int(geometry["n_classes"]))


def encoder_layers(network: NetworkSpec) -> tuple[LayerSpec, ...]:
    return tuple(
        layer for layer in network.parametric_layers if layer.name.startswith(ENCODER_PREFIX)
    )


def matrix_shapes(network: NetworkSpec) -> tuple[tuple[int, int], ...]:
    """Shapes of the exported matrices: ``(out, fan_in + 1)`` per encoder layer."""
    return tuple((layer.bias_shape()[0], layer.fan_in + 1) for layer in encoder_layers(network))


@dataclass(frozen=True, eq=False)
class EncodedMeta:
    """Encoder parameters of one dataset, bias appended as the last column.

    Attributes:
        matrices: One ``(out, in + 1)`` matrix per parametric encoder layer.
        dataset_id: Identifier of the encoded dataset.
        spec_hash: :func:`encoder_fingerprint` of the spec and geometry used.
        initial_loss: Reconstruction loss at initialization.
        final_loss: Reconstruction loss after training.
    """

    matrices: tuple[np.ndarray, ...]
    dataset_id: str = ""
    spec_hash: str = ""
    initial_loss: float = math.nan
    final_loss: float = math.nan

    def __post_init__(self) -> None:
        matrices = tuple(np.asarray(m, dtype=np.float64) for m in self.matrices)
        if not matrices:
            raise ShapeError("<meta>", "an encoded meta needs at least one matrix")
        for i, m in enumerate(matrices):
            if m.ndim != 2 or m.shape[1] < 2:
                raise ShapeError(f"matrix{i}", f"expects (out, in + 1) matrix, got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ShapeError(f"matrix{i}", "non-finite entries")
        object.__setattr__(self, "matrices", matrices)

    @property
    def matrix_shapes(self) -> tuple[tuple[int, int], ...]:
        return tuple((int(m.shape[0]), int(m.shape[1])) for m in self.matrices)

    def split_bias(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """``(weight, bias)`` per matrix; convolution kernels stay flattened."""
        return [(m[:, :-1], m[:, -1]) for m in self.matrices]


def export_encoder(network: NetworkSpec, params: NetworkParams) -> tuple[np.ndarray, ...]:
    """Encoder parameters of ``network`` as bias-augmented matrices."""
    out = []
    for layer in encoder_layers(network):
        weight, bias = params[layer.name]
        flat = weight.reshape(weight.shape[0], -1)
        out.append(np.hstack([flat, bias[:, np.newaxis]]))
    return tuple(out)


def _standardize(features: np.ndarray) -> np.ndarray:
    sd = features.std(axis=0)
    sd[sd == 0] = 1.0
    return (features - features.mean(axis=0)) / sd


def training_pairs(dataset: Dataset) -> tuple[list[np.ndarray], np.ndarray]:
    """Autoencoder ``(inputs, targets)`` for ``dataset``.

    Tabular features are standardized per column (zero columns stay zero)
    before being joined with the one-hot label.
    """
    labels = one_hot(dataset.labels, dataset.n_classes)
    if isinstance(dataset, TabularDataset):
        joint = np.hstack([_standardize(dataset.features), labels])
        return [joint], joint
    images = dataset.images.astype(np.float64)
    target = np.hstack([images.reshape(dataset.n_rows, -1), labels])
    return [images, labels], target


def encode_dataset(
    dataset: Dataset, spec: EncoderSpec, seed: int = 0, dataset_id: str = ""
) -> EncodedMeta:
    """Train the autoencoder on ``dataset`` and export its encoder.

    Table datasets must already be zero-padded to the run-wide feature width.
    ``seed`` replaces ``spec.train.seed`` and fixes the result bit for bit.

    Raises:
        TrainingDivergedError: If reconstruction training diverges; the error
            carries the loss trace.
    """
    if dataset.n_rows == 0:
        raise ValueError("cannot encode an empty dataset")
    expected = "image_npe" if isinstance(dataset, ImageDataset) else "table_npe"
    if spec.variant != expected:
        raise ValueError(f"{type(dataset).__name__} needs variant {expected}, got {spec.variant}")
    geometry = geometry_of(dataset)
    network = build_encoder_network(spec, geometry)
    inputs, targets = training_pairs(dataset)
    result = train(network, replace(spec.train, seed=seed), (inputs, targets))
    meta = EncodedMeta(
        matrices=export_encoder(network, result.params),
        dataset_id=dataset_id,
        spec_hash=encoder_fingerprint(spec, geometry),
        initial_loss=result.initial_loss,
        final_loss=result.final_loss,
    )
    logger.debug(
        f"encoded '{dataset_id}': loss {result.initial_loss:.4g} -> {result.final_loss:.4g}"
    )
    return meta
