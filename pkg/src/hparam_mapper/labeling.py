"""Training labels for the core network.

Each sampled dataset is labelled with a near-optimal hyperparameter vector
found by seeded random search refined with :func:`hparam_mapper.lopt.lopt`.
Labels reach the network through an exactly invertible transform: the
working-scale value ``u`` (``log10`` for log-scaled parameters) is mapped
affinely from ``[u_min, u_max]`` onto ``[-0.95, 0.95]``, inside the range of a
tanh output head.
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np

from .datasets import SplitPair
from .environments import Environment, HyperparamSpec, HyperparamVector, random_search
from .errors import HparamMapperError, LabelingError, OutOfBoundsError
from .logging import get_logger
from .lopt import LoptConfig, lopt
from .npe import EncodedMeta

logger = get_logger("labeling")

LABEL_CEILING = 0.95


def transform_label(
    p: HyperparamVector | Sequence[float], specs: Sequence[HyperparamSpec] | None = None
) -> np.ndarray:
    """Map native values to ``[-0.95, 0.95]`` per coordinate.

    >>> spec = HyperparamSpec("c", 0.01, 100.0, scale="log10")
    >>> transform_label([1.0], [spec]).tolist()
    [0.0]

    Raises:
        OutOfBoundsError: If a value lies outside its bounds.
    """
    if specs is None:
        if not isinstance(p, HyperparamVector):
            raise ValueError("specs are required for raw values")
        specs = p.specs
    values = p.values if isinstance(p, HyperparamVector) else tuple(p)
    if len(values) != len(specs):
        raise ValueError("values and specs differ in length")
    out = np.empty(len(specs))
    for i, (spec, value) in enumerate(zip(specs, values, strict=True)):
        if not spec.low <= value <= spec.high:
            raise OutOfBoundsError(spec.name, value, spec.low, spec.high)
        lo, hi = spec.u_bounds
        out[i] = LABEL_CEILING * (2.0 * (spec.to_u(value) - lo) / (hi - lo) - 1.0)
    return out


def inverse_transform(
    z: Sequence[float] | np.ndarray, specs: Sequence[HyperparamSpec]
) -> HyperparamVector:
    """Invert :func:`transform_label`; total on finite input.

    ``z`` is clamped to ``[-0.95, 0.95]`` first and integer parameters are
    rounded to the nearest in-bounds integer.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (len(specs),):
        raise ValueError(f"expected {len(specs)} coordinates, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("cannot invert non-finite label coordinates")
    z = np.clip(z, -LABEL_CEILING, LABEL_CEILING)
    u = []
    for spec, value in zip(specs, z, strict=True):
        lo, hi = spec.u_bounds
        u.append(lo + (float(value) / LABEL_CEILING + 1.0) * (hi - lo) / 2.0)
    return HyperparamVector.from_u(specs, u)


@dataclass(frozen=True)
class LabelRecord:
    """One entry of a label file."""

    dataset_id: str
    raw_label: HyperparamVector
    achieved_accuracy: float
    evaluations: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset_id": self.dataset_id,
            "raw_label": self.raw_label.as_dict(),
            "achieved_accuracy": self.achieved_accuracy,
        }


@dataclass(frozen=True)
class LabeledExample:
    """An encoded dataset with its label, as consumed by core-network training."""

    meta: EncodedMeta
    raw_label: HyperparamVector
    achieved_accuracy: float = math.nan

    @property
    def transformed_label(self) -> np.ndarray:
        return transform_label(self.raw_label)


def label_dataset(
    env: Environment,
    split: SplitPair[Any] | None,
    budget: int,
    seed: int = 0,
    lopt_config: LoptConfig | None = None,
    dataset_id: str = "",
) -> LabelRecord:
    """Best vector found for ``split`` within ``budget`` evaluations.

    Half the budget (at least ``d + 1`` probes) goes to seeded random search;
    the rest refines the incumbent with local search. With a budget of
    exactly ``d + 1`` only random probes run.

    Raises:
        ValueError: If ``budget < d + 1``.
        LabelingError: If the environment fails; carries ``dataset_id``.
    """
    d = len(env.specs)
    if budget < d + 1:
        raise ValueError(f"labeling budget {budget} is below {d + 1}")
    n_random = max(d + 1, budget // 2)
    remaining = budget - n_random
    try:
        found = random_search(env, split, n_random, seed=seed)
        best, accuracy, used = found.vector, found.accuracy, found.evaluations
        # The refinement re-scores its start, so it needs two evaluations to move.
        if remaining >= 2:
            cfg = replace(lopt_config or LoptConfig(), eval_budget=remaining)
            refined = lopt(best, env, split, cfg)
            best, accuracy = refined.vector, refined.accuracy
            used += refined.evaluations
    except (HparamMapperError, ValueError, RuntimeError, FloatingPointError, TypeError) as exc:
        raise LabelingError(dataset_id, str(exc)) from exc
    logger.debug(f"labelled '{dataset_id}': {best.as_dict()} -> {accuracy:.4f} ({used} evals)")
    return LabelRecord(dataset_id, best, accuracy, used)


def save_label_file(records: Sequence[LabelRecord], path: str | Path) -> None:
    """Write records as a JSON array of ``{dataset_id, raw_label, achieved_accuracy}``."""
    Path(path).write_text(json.dumps([r.to_dict() for r in records], indent=2))


def load_label_file(path: str | Path, specs: Sequence[HyperparamSpec]) -> list[LabelRecord]:
    """Read a label file, e.g. one produced by an external tuning tool.

    Raises:
        LabelingError: If an entry is malformed or misses a hyperparameter.
        OutOfBoundsError: If a label lies outside its bounds.
    """
    records = []
    for i, entry in enumerate(json.loads(Path(path).read_text())):
        dataset_id = str(entry.get("dataset_id", f"#{i}"))
        try:
            vector = HyperparamVector.from_mapping(specs, entry["raw_label"])
            accuracy = float(entry.get("achieved_accuracy", math.nan))
        except (KeyError, TypeError) as exc:
            raise LabelingError(dataset_id, f"malformed label entry: {exc}") from exc
        records.append(LabelRecord(dataset_id, vector, accuracy))
    return records
