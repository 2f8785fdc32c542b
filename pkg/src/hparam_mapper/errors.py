"""Exception hierarchy for hparam_mapper.

Every error raised on purpose by the package derives from
:class:`HparamMapperError` and from the closest builtin, so callers can catch
either ``HparamMapperError`` or e.g. ``ValueError``.
"""

from __future__ import annotations

from collections.abc import Sequence


class HparamMapperError(Exception):
    """Base class for all package errors."""


class ShapeError(HparamMapperError, ValueError):
    """A tensor or layer shape does not fit the network graph."""

    def __init__(self, layer: str, message: str) -> None:
        self.layer = layer
        super().__init__(f"layer '{layer}': {message}")


class NonFiniteLossError(HparamMapperError, FloatingPointError):
    """The loss of a batch evaluated to NaN or infinity."""

    def __init__(self, batch_index: int, value: float) -> None:
        self.batch_index = batch_index
        self.value = value
        super().__init__(f"non-finite loss {value!r} on batch {batch_index}")


class TrainingDivergedError(HparamMapperError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss_history: Sequence[float], reason: str = "") -> None:
        self.epoch = epoch
        self.loss_history = list(loss_history)
        detail = f": {reason}" if reason else ""
        super().__init__(f"training diverged at epoch {epoch}{detail}")


class DatasetFormatError(HparamMapperError, ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, message: str, row: int | None = None, column: int | None = None) -> None:
        self.row = row
        self.column = column
        where = ""
        if row is not None:
            where = f" (row {row}, column {column})"
        super().__init__(f"{message}{where}")


class InsufficientDataError(HparamMapperError, ValueError):
    """A dataset (or one of its classes) has too few rows for the request."""

    def __init__(self, message: str, label: int | None = None) -> None:
        self.label = label
        super().__init__(message)


class InfeasiblePlanError(HparamMapperError, ValueError):
    """No number of draws reaches the requested count of independent subsets."""

    def __init__(self, k: int, max_expected: float) -> None:
        self.k = k
        self.max_expected = max_expected
        super().__init__(
            f"cannot expect {k} independent subsets; best achievable E[n] is {max_expected:.4f}"
        )


class InsufficientSamplesError(HparamMapperError, RuntimeError):
    """Independent sampling retained fewer subsets than required."""

    def __init__(self, retained: int, required: int) -> None:
        self.retained = retained
        self.required = required
        super().__init__(
            f"retained {retained} independent subsets, {required} required; "
            "re-seed or raise the number of draws"
        )


class OutOfBoundsError(HparamMapperError, ValueError):
    """A hyperparameter value lies outside its declared bounds."""

    def __init__(self, name: str, value: float, low: float, high: float) -> None:
        self.name = name
        self.value = value
        super().__init__(f"hyperparameter '{name}' = {value!r} outside [{low!r}, {high!r}]")


class DegenerateSplitError(HparamMapperError, ValueError):
    """A train split cannot be learned from (e.g. a single class)."""


class SpecMismatchError(HparamMapperError, ValueError):
    """An artifact was produced under a different encoder or network spec."""


class LabelingError(HparamMapperError, RuntimeError):
    """The labeling oracle failed on a dataset."""

    def __init__(self, dataset_id: str, message: str) -> None:
        self.dataset_id = dataset_id
        super().__init__(f"labeling dataset '{dataset_id}' failed: {message}")


class PipelineStageError(HparamMapperError, RuntimeError):
    """A pipeline stage aborted."""

    def __init__(self, stage: str, message: str) -> None:
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {message}")


class ConfigError(HparamMapperError, ValueError):
    """The pipeline configuration is invalid."""


class ModelFormatError(HparamMapperError, ValueError):
    """A persisted model or meta file is malformed or of an unknown version."""
