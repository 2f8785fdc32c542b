"""Desk-scale synthetic corpora.

A *noisy blob* dataset draws each class from a unit Gaussian around its own
center and then flips a ``noise_rate`` share of the labels to another class.
A family varies the noise rate monotonically across its members, so any
hyperparameter whose best value depends on label noise varies with it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import TabularDataset


def noisy_blobs(
    n_rows: int,
    n_features: int = 4,
    n_classes: int = 2,
    *,
    separation: float = 3.0,
    noise_rate: float = 0.0,
    seed: int | np.random.Generator = 0,
) -> TabularDataset:
    """Gaussian blobs with flipped labels.

    Classes are balanced (up to one row) before flipping. Centers lie on a
    sphere of radius ``separation / 2`` around the origin.
    """
    if n_rows < n_classes:
        raise ValueError("need at least one row per class")
    if n_classes < 2:
        raise ValueError("noisy blobs need at least two classes")
    if not 0.0 <= noise_rate < 1.0:
        raise ValueError("noise_rate must lie in [0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    directions = rng.normal(size=(n_classes, n_features))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centers = directions * separation / 2.0

    labels = rng.permutation(np.arange(n_rows) % n_classes)
    features = centers[labels] + rng.normal(size=(n_rows, n_features))
    flip = rng.random(n_rows) < noise_rate
    shift = rng.integers(1, n_classes, size=n_rows)
    noisy = np.where(flip, (labels + shift) % n_classes, labels)
    return TabularDataset(
        features=features,
        labels=noisy,
        n_classes=n_classes,
        feature_names=tuple(f"x{i}" for i in range(n_features)),
    )


@dataclass(frozen=True)
class SyntheticMember:
    dataset_id: str
    dataset: TabularDataset
    noise_rate: float


def noisy_blob_family(
    n_datasets: int,
    n_rows: int = 100,
    n_features: int = 4,
    n_classes: int = 2,
    *,
    noise_range: tuple[float, float] = (0.0, 0.4),
    separation: float = 3.0,
    seed: int = 0,
) -> list[SyntheticMember]:
    """``n_datasets`` noisy-blob datasets with linearly increasing noise rates.

    Member ``i`` draws from the ``i``-th child of ``SeedSequence(seed)``.
    """
    if n_datasets < 1:
        raise ValueError("n_datasets must be positive")
    rates = np.linspace(noise_range[0], noise_range[1], n_datasets)
    children = np.random.SeedSequence(seed).spawn(n_datasets)
    width = len(str(n_datasets - 1))
    return [
        SyntheticMember(
            dataset_id=f"blob{i:0{width}d}",
            dataset=noisy_blobs(
                n_rows,
                n_features,
                n_classes,
                separation=separation,
                noise_rate=float(rate),
                seed=np.random.default_rng(child),
            ),
            noise_rate=float(rate),
        )
        for i, (rate, child) in enumerate(zip(rates, children, strict=True))
    ]
