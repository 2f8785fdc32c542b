"""Tabular and image datasets: loading, saving, padding and splitting.

Formats:

* Tabular CSV: header row required, numeric feature columns, the last column
  is the label. Labels may be any strings; they are re-indexed densely in
  order of first occurrence.
* Image container: a 4-byte magic ``b"HPMI"``, five little-endian ``u32``
  (n, H, W, C, n_classes), ``n*H*W*C`` little-endian ``float32`` pixels in
  row-major NHWC order, then ``n`` little-endian ``u32`` labels.

Both writers round-trip bit-exactly through their readers.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Generic, TypeVar

import numpy as np

from .errors import DatasetFormatError, InsufficientDataError
from .logging import get_logger

logger = get_logger("datasets")

IMAGE_MAGIC = b"HPMI"
_HEADER = np.dtype("<u4")

DEFAULT_SPLIT_RATIO = 0.9
MIN_SPLIT_ROWS = 10


@dataclass(frozen=True, eq=False)
class TabularDataset:
    """Feature matrix with integer class labels.

    Attributes:
        features: ``(n_rows, n_features)`` float64 matrix.
        labels: ``(n_rows,)`` int64 class indices in ``[0, n_classes)``.
        n_classes: Number of classes of the source corpus (subsets keep it).
        feature_names: Column names, when known.
        label_names: Original label strings indexed by class, when known.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    feature_names: tuple[str, ...] | None = None
    label_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise DatasetFormatError(f"features must be 2-D, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise DatasetFormatError("labels must have one entry per row")
        if not np.all(np.isfinite(features)):
            raise DatasetFormatError("features contain non-finite values")
        if self.n_classes < 1:
            raise DatasetFormatError("n_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise DatasetFormatError("labels must lie in [0, n_classes)")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n_rows(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return self.n_rows

    def take(self, indices: Sequence[int] | np.ndarray) -> TabularDataset:
        """Rows at ``indices``, in that order."""
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, features=self.features[idx], labels=self.labels[idx])


@dataclass(frozen=True, eq=False)
class ImageDataset:
    """Images in ``[0, 1]`` laid out as ``(n, H, W, C)`` float32."""

    images: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        images = np.asarray(self.images, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise DatasetFormatError(f"images must be (n, H, W, C), got shape {images.shape}")
        if labels.shape != (images.shape[0],):
            raise DatasetFormatError("labels must have one entry per image")
        if images.size and (
            not np.all(np.isfinite(images)) or images.min() < 0.0 or images.max() > 1.0
        ):
            raise DatasetFormatError("pixels must lie in [0, 1]")
        if self.n_classes < 1:
            raise DatasetFormatError("n_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise DatasetFormatError("labels must lie in [0, n_classes)")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    @property
    def n_rows(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_shape(self) -> tuple[int, int, int]:
        _, h, w, c = self.images.shape
        return int(h), int(w), int(c)

    def __len__(self) -> int:
        return self.n_rows

    def take(self, indices: Sequence[int] | np.ndarray) -> ImageDataset:
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, images=self.images[idx], labels=self.labels[idx])


Dataset = TabularDataset | ImageDataset
D = TypeVar("D", TabularDataset, ImageDataset)


@dataclass(frozen=True)
class SplitPair(Generic[D]):
    """Disjoint train/test partition of one dataset."""

    train: D
    test: D
    ratio: float = DEFAULT_SPLIT_RATIO
    train_indices: tuple[int, ...] = field(default=(), repr=False)
    test_indices: tuple[int, ...] = field(default=(), repr=False)


def load_tabular(
    path: str | Path,
    format: str = "csv",  # noqa: A002
    label_names: Sequence[str] | None = None,
) -> TabularDataset:
    """Load a CSV file whose last column holds the label.

    Args:
        path: CSV file with a header row.
        format: Only ``"csv"`` is supported.
        label_names: Fixed label vocabulary. Labels are then indexed by their
            position in it and ``n_classes`` is its length, so subsets of one
            corpus keep the corpus indexing.

    Returns:
        The dataset, labels indexed by first occurrence unless a vocabulary
        is given.

    Raises:
        DatasetFormatError: On an empty file, a ragged row or a cell that is
            blank or not a finite number (row/column are 1-based, the header
            being row 1).

    Examples:
        >>> import tempfile, os
        >>> with tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False) as f:
        ...     _ = f.write("x,y,label\\n1,2,a\\n3,4,c\\n5,6,a\\n")
        >>> d = load_tabular(f.name)
        >>> d.n_rows, d.n_features, d.labels.tolist(), d.n_classes
        (3, 2, [0, 1, 0], 2)
        >>> os.unlink(f.name)
    """
    if format != "csv":
        raise DatasetFormatError(f"unsupported tabular format '{format}'")
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise DatasetFormatError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if len(header) < 2:
        raise DatasetFormatError(f"{path}: need at least one feature and a label column")
    if not body:
        raise DatasetFormatError(f"{path}: no data rows")

    width = len(header)
    features = np.empty((len(body), width - 1), dtype=np.float64)
    fixed = label_names is not None
    label_index: dict[str, int] = {str(name): i for i, name in enumerate(label_names or ())}
    labels = np.empty(len(body), dtype=np.int64)
    for r, row in enumerate(body, start=2):
        if len(row) != width:
            raise DatasetFormatError(f"expected {width} cells, got {len(row)}", row=r, column=None)
        for c, cell in enumerate(row[:-1]):
            features[r - 2, c] = _parse_cell(cell, r, c + 1)
        label = row[-1].strip()
        if not label:
            raise DatasetFormatError("blank label", row=r, column=width)
        if fixed and label not in label_index:
            raise DatasetFormatError(f"unknown label {label!r}", row=r, column=width)
        labels[r - 2] = label_index.setdefault(label, len(label_index))

    logger.info(
        f"loaded {path}: {len(body)} rows, {width - 1} features, {len(label_index)} classes"
    )
    return TabularDataset(
        features=features,
        labels=labels,
        n_classes=len(label_index),
        feature_names=tuple(h.strip() for h in header[:-1]),
        label_names=tuple(label_index),
    )


def _parse_cell(cell: str, row: int, column: int) -> float:
    text = cell.strip()
    if not text:
        raise DatasetFormatError("blank cell", row=row, column=column)
    try:
        value = float(text)
    except ValueError:
        raise DatasetFormatError(f"non-numeric cell {cell!r}", row=row, column=column) from None
    if not math.isfinite(value):
        raise DatasetFormatError(f"non-finite cell {cell!r}", row=row, column=column)
    return value


def save_tabular(dataset: TabularDataset, path: str | Path) -> None:
    """Write ``dataset`` in the CSV layout read by :func:`load_tabular`.

    Floats are written with ``repr`` (shortest round-trip form).
    """
    names = dataset.feature_names or tuple(f"f{i}" for i in range(dataset.n_features))
    label_names = dataset.label_names or tuple(str(i) for i in range(dataset.n_classes))
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow([*names, "label"])
        for row, label in zip(dataset.features, dataset.labels, strict=True):
            writer.writerow([repr(float(v)) for v in row] + [label_names[label]])


def save_images(dataset: ImageDataset, path: str | Path) -> None:
    """Write ``dataset`` in the binary image container."""
    n = dataset.n_rows
    h, w, c = dataset.image_shape
    header = np.array([n, h, w, c, dataset.n_classes], dtype=_HEADER)
    with open(path, "wb") as handle:
        handle.write(IMAGE_MAGIC)
        handle.write(header.tobytes())
        handle.write(dataset.images.astype("<f4").tobytes())
        handle.write(dataset.labels.astype(_HEADER).tobytes())


def load_images(path: str | Path) -> ImageDataset:
    """Read the binary image container written by :func:`save_images`.

    Raises:
        DatasetFormatError: On a bad magic or a truncated file.
    """
    blob = Path(path).read_bytes()
    if blob[:4] != IMAGE_MAGIC:
        raise DatasetFormatError(f"{path}: not an image container (bad magic)")
    header_end = 4 + 5 * _HEADER.itemsize
    if len(blob) < header_end:
        raise DatasetFormatError(f"{path}: truncated header")
    n, h, w, c, n_classes = (int(v) for v in np.frombuffer(blob[4:header_end], dtype=_HEADER))
    n_pixels = n * h * w * c
    expected = header_end + 4 * n_pixels + 4 * n
    if len(blob) != expected:
        raise DatasetFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    pixels_end = header_end + 4 * n_pixels
    images = np.frombuffer(blob[header_end:pixels_end], dtype="<f4").reshape(n, h, w, c)
    labels = np.frombuffer(blob[pixels_end:], dtype=_HEADER).astype(np.int64)
    return ImageDataset(images=images.astype(np.float32), labels=labels, n_classes=n_classes)


def zero_pad_features(dataset: TabularDataset, target_n_features: int) -> TabularDataset:
    """Append all-zero feature columns up to ``target_n_features``.

    Raises:
        ValueError: If the target is narrower than the dataset.
    """
    extra = target_n_features - dataset.n_features
    if extra < 0:
        raise ValueError(
            f"cannot pad {dataset.n_features} features down to {target_n_features}"
        )
    if extra == 0:
        return dataset
    features = np.hstack([dataset.features, np.zeros((dataset.n_rows, extra))])
    names = None
    if dataset.feature_names is not None:
        names = dataset.feature_names + tuple(f"pad{i}" for i in range(extra))
    return replace(dataset, features=features, feature_names=names)


def split_indices(n: int, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded permutation of ``range(n)`` cut into train/test index arrays.

    The train side holds ``round(n * ratio)`` indices, leaving at least one on
    each side when ``n >= 2``. Both arrays are returned sorted.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    if n < 2:
        raise InsufficientDataError(f"need at least 2 rows to split, got {n}")
    n_train = min(max(round(n * ratio), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def split(dataset: D, ratio: float = DEFAULT_SPLIT_RATIO, seed: int = 0) -> SplitPair[D]:
    """Split ``dataset`` into disjoint train/test parts, 9:1 by default.

    Raises:
        InsufficientDataError: If the dataset has fewer than 10 rows.
    """
    if dataset.n_rows < MIN_SPLIT_ROWS:
        raise InsufficientDataError(
            f"need at least {MIN_SPLIT_ROWS} rows to split, got {dataset.n_rows}"
        )
    train_idx, test_idx = split_indices(dataset.n_rows, ratio, seed)
    return SplitPair(
        train=dataset.take(train_idx),
        test=dataset.take(test_idx),
        ratio=ratio,
        train_indices=tuple(int(i) for i in train_idx),
        test_indices=tuple(int(i) for i in test_idx),
    )


def stratified_sample(dataset: D, per_class: int, seed: int = 0) -> D:
    """Draw exactly ``per_class`` rows of every class, without replacement.

    Rows keep their original relative order.

    Raises:
        InsufficientDataError: Naming the first class with too few rows.
    """
    if per_class < 0:
        raise ValueError("per_class must be non-negative")
    rng = np.random.default_rng(seed)
    chosen: list[np.ndarray] = []
    for label in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == label)
        if members.size < per_class:
            raise InsufficientDataError(
                f"class {label} has {members.size} rows, {per_class} requested", label=label
            )
        chosen.append(rng.choice(members, size=per_class, replace=False))
    indices = np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)
    return dataset.take(indices)


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """``(n, n_classes)`` float matrix with a single 1 per row."""
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out
