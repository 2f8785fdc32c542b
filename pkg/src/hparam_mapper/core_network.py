"""The core network: encoded dataset -> transformed hyperparameters.

Every matrix of an :class:`~hparam_mapper.npe.EncodedMeta` enters its own
branch as a one-channel image (convolution + relu + flatten, or flatten only
when the matrix is smaller than the kernel). Branches are concatenated and
fed through a tanh trunk with dropout, then one dense head per
hyperparameter with that hyperparameter's head activation.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np
from scipy.stats import spearmanr

from .datasets import split_indices
from .environments import HyperparamSpec, HyperparamVector
from .errors import ShapeError, SpecMismatchError
from .labeling import LabeledExample, inverse_transform
from .logging import get_logger
from .nn_engine import (
    LayerSpec,
    NetworkParams,
    NetworkSpec,
    StepHook,
    TrainConfig,
    activation,
    concat,
    conv2d,
    dense,
    dropout,
    flatten,
    forward,
    init_params,
    train,
)
from .npe import EncodedMeta, EncoderSpec, build_encoder_network, matrix_shapes

logger = get_logger("core_network")

MatrixShape = tuple[int, int]


def _default_cn_train() -> TrainConfig:
    return TrainConfig(learning_rate=0.05, epochs=200, batch_size=16, clip_norm=1.0)


@dataclass(frozen=True)
class CnConfig:
    """Tunable parts of the core network.

    Attributes:
        kernel: Branch convolution kernel size.
        stride: Branch convolution stride.
        channels: Branch convolution output channels.
        trunk_widths: Widths of the tanh trunk layers.
        dropout: Dropout rate after every trunk layer (training only).
        validation_fraction: Share of examples held out during training.
        train: Optimizer settings; ``clip_norm`` is required.
    """

    kernel: int = 3
    stride: int = 2
    channels: int = 4
    trunk_widths: tuple[int, ...] = (64, 64)
    dropout: float = 0.1
    validation_fraction: float = 0.1
    train: TrainConfig = field(default_factory=_default_cn_train)

    def __post_init__(self) -> None:
        if self.kernel < 1 or self.stride < 1 or self.channels < 1:
            raise ValueError("kernel, stride and channels must be positive")
        if any(w < 1 for w in self.trunk_widths):
            raise ValueError("trunk widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.train.clip_norm is None:
            raise ValueError("core network training needs gradient clipping (clip_norm)")

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["trunk_widths"] = list(self.trunk_widths)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> CnConfig:
        values = dict(doc)
        if "trunk_widths" in values:
            values["trunk_widths"] = tuple(values["trunk_widths"])
        if "train" in values:
            values["train"] = TrainConfig(**values["train"])
        return cls(**values)


@dataclass(frozen=True)
class CoreNetworkSpec:
    """A built core network and what it was built for."""

    config: CnConfig
    matrix_shapes: tuple[MatrixShape, ...]
    specs: tuple[HyperparamSpec, ...]
    network: NetworkSpec
    degraded_branches: tuple[int, ...] = ()

    @property
    def branch_names(self) -> tuple[str, ...]:
        return self.network.input_names


def build_cn(
    encoder: EncoderSpec | Sequence[MatrixShape],
    specs: Sequence[HyperparamSpec],
    config: CnConfig | None = None,
    *,
    geometry: Mapping[str, Any] | None = None,
) -> CoreNetworkSpec:
    """Build the core network for an encoder's matrices.

    Args:
        encoder: The encoder spec (``geometry`` then required) or the matrix
            shapes it exports.
        specs: Hyperparameters predicted, one head each.
        config: Branch/trunk settings.
        geometry: Dataset geometry (see :func:`hparam_mapper.npe.geometry_of`).

    Raises:
        ShapeError: If there are no matrices or no hyperparameters.
    """
    config = config or CnConfig()
    if isinstance(encoder, EncoderSpec):
        if geometry is None:
            raise ValueError("geometry is required to build from an encoder spec")
        shapes = matrix_shapes(build_encoder_network(encoder, geometry))
    else:
        shapes = tuple((int(h), int(w)) for h, w in encoder)
    if not shapes:
        raise ShapeError("join", "the encoder exports no matrices")
    if not specs:
        raise ShapeError("heads", "at least one hyperparameter is required")

    layers: list[LayerSpec] = []
    branch_outputs = []
    degraded = []
    for i, (h, w) in enumerate(shapes):
        src = f"m{i}"
        if h >= config.kernel and w >= config.kernel:
            layers.append(
                conv2d(f"branch{i}_conv", 1, config.channels, config.kernel, config.stride, (src,))
            )
            layers.append(activation(f"branch{i}_relu", "relu"))
            layers.append(flatten(f"branch{i}_flat"))
        else:
            layers.append(flatten(f"branch{i}_flat", (src,)))
            degraded.append(i)
            logger.warning(
                f"matrix {i} of shape {(h, w)} is smaller than the {config.kernel}x"
                f"{config.kernel} kernel; branch reduced to flatten"
            )
        branch_outputs.append(f"branch{i}_flat")
    layers.append(concat("join", branch_outputs))

    input_shapes = tuple((h, w, 1) for h, w in shapes)
    input_names = tuple(f"m{i}" for i in range(len(shapes)))
    # The graph up to the join is itself a valid network; it gives the joined width.
    width = NetworkSpec(input_shapes, tuple(layers), input_names).output_shape[0]
    trunk_in = "join"
    for j, out in enumerate(config.trunk_widths):
        layers.append(dense(f"trunk{j}", width, out, (trunk_in,)))
        layers.append(activation(f"trunk{j}_tanh", "tanh"))
        trunk_in = f"trunk{j}_tanh"
        if config.dropout > 0:
            layers.append(dropout(f"trunk{j}_drop", config.dropout))
            trunk_in = f"trunk{j}_drop"
        width = out
    heads = []
    for p, spec in enumerate(specs):
        layers.append(dense(f"head{p}", width, 1, (trunk_in,)))
        layers.append(activation(f"head{p}_{spec.head_activation}", spec.head_activation))
        heads.append(f"head{p}_{spec.head_activation}")
    layers.append(concat("heads", heads))

    network = NetworkSpec(input_shapes, tuple(layers), input_names)
    return CoreNetworkSpec(config, shapes, tuple(specs), network, tuple(degraded))


@dataclass(frozen=True, eq=False)
class CoreNetworkModel:
    """Trained (or, for the blank control, freshly initialized) core network.

    ``encoder`` and ``geometry`` record how datasets must be encoded for this
    model; they are optional for models built outside the pipeline.
    """

    spec: CoreNetworkSpec
    params: NetworkParams
    encoder_spec_hash: str = ""
    loss_history: tuple[float, ...] = ()
    validation_history: tuple[float, ...] = ()
    trained: bool = True
    encoder: EncoderSpec | None = None
    geometry: Mapping[str, Any] | None = None

    @property
    def specs(self) -> tuple[HyperparamSpec, ...]:
        return self.spec.specs


def _stack_inputs(spec: CoreNetworkSpec, metas: Sequence[EncodedMeta]) -> list[np.ndarray]:
    for meta in metas:
        if meta.matrix_shapes != spec.matrix_shapes:
            raise ShapeError(
                "join",
                f"meta '{meta.dataset_id}' has matrices {meta.matrix_shapes}, "
                f"network expects {spec.matrix_shapes}",
            )
    return [
        np.stack([meta.matrices[i] for meta in metas])[..., np.newaxis]
        for i in range(len(spec.matrix_shapes))
    ]


def train_cn(
    examples: Sequence[LabeledExample],
    spec: CoreNetworkSpec,
    seed: int = 0,
    *,
    on_step: StepHook | None = None,
) -> CoreNetworkModel:
    """Fit the core network to transformed labels.

    A seeded ``validation_fraction`` of the examples (at least one) is held
    out and scored after every epoch.

    Raises:
        ValueError: With fewer than two examples.
        SpecMismatchError: If the examples were encoded under different specs.
        TrainingDivergedError: With the epoch trace, if training diverges.
    """
    if len(examples) < 2:
        raise ValueError("core network training needs at least 2 examples")
    hashes = {ex.meta.spec_hash for ex in examples}
    if len(hashes) != 1:
        raise SpecMismatchError(f"examples come from {len(hashes)} encoder specs")
    names = tuple(s.name for s in spec.specs)
    for ex in examples:
        if tuple(s.name for s in ex.raw_label.specs) != names:
            raise SpecMismatchError(f"label of '{ex.meta.dataset_id}' does not match {names}")

    inputs = _stack_inputs(spec, [ex.meta for ex in examples])
    targets = np.stack([ex.transformed_label for ex in examples])
    train_idx, val_idx = split_indices(len(examples), 1.0 - spec.config.validation_fraction, seed)
    result = train(
        spec.network,
        replace(spec.config.train, seed=seed),
        ([a[train_idx] for a in inputs], targets[train_idx]),
        validation=([a[val_idx] for a in inputs], targets[val_idx]),
        on_step=on_step,
    )
    logger.info(
        f"core network trained on {train_idx.size} examples "
        f"(validation {val_idx.size}): loss {result.initial_loss:.4g} -> {result.final_loss:.4g}"
    )
    return CoreNetworkModel(
        spec=spec,
        params=result.params,
        encoder_spec_hash=hashes.pop(),
        loss_history=tuple(result.loss_history),
        validation_history=tuple(result.validation_history),
    )


def init_cn(spec: CoreNetworkSpec, seed: int = 0, encoder_spec_hash: str = "") -> CoreNetworkModel:
    """Untrained, randomly initialized core network (the blank control)."""
    return CoreNetworkModel(
        spec=spec,
        params=init_params(spec.network, seed),
        encoder_spec_hash=encoder_spec_hash,
        trained=False,
    )


def predict_raw(model: CoreNetworkModel, meta: EncodedMeta) -> np.ndarray:
    """Head outputs for ``meta``, before the inverse label transform.

    Raises:
        SpecMismatchError: If ``meta`` was encoded under another encoder spec.
        ShapeError: If the matrices do not fit the network.
    """
    if model.encoder_spec_hash and meta.spec_hash != model.encoder_spec_hash:
        raise SpecMismatchError(
            f"meta '{meta.dataset_id}' encoded under {meta.spec_hash[:12] or 'no spec'}, "
            f"model expects {model.encoder_spec_hash[:12]}"
        )
    inputs = _stack_inputs(model.spec, [meta])
    return forward(model.spec.network, model.params, inputs)[0]


def predict(model: CoreNetworkModel, meta: EncodedMeta) -> HyperparamVector:
    """Predicted in-bounds hyperparameters for an encoded dataset."""
    return inverse_transform(predict_raw(model, meta), model.specs)


def spearman(predicted: Sequence[float], truth: Sequence[float]) -> float:
    """Spearman rank correlation; NaN when either side is constant."""
    if len(predicted) != len(truth):
        raise ValueError("predicted and truth differ in length")
    if len(predicted) < 2 or np.ptp(predicted) == 0 or np.ptp(truth) == 0:
        return float("nan")
    return float(spearmanr(predicted, truth)[0])
