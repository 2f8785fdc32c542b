"""Target learners ("environments") and their hyperparameter schemas.

An environment trains a learner with a hyperparameter vector on a split's
train side and returns accuracy on its test side. Every search in the
package (labeling oracle, local refinement, random-search baseline)
maximises :meth:`Environment.evaluate`.

Hyperparameters live in two coordinate systems: the native value ``v`` and
the working scale ``u`` (``u = log10(v)`` for log-scaled parameters, ``u = v``
otherwise). Strides, label transforms and the analytic surrogates all work
in ``u``.
"""

from __future__ import annotations

import json
import math
import threading
from abc import ABC, abstractmethod
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .datasets import SplitPair, TabularDataset, one_hot
from .errors import DegenerateSplitError, OutOfBoundsError
from .logging import get_logger

logger = get_logger("environments")

DTYPES = ("real", "integer")
SCALES = ("linear", "log10")
HEAD_ACTIVATIONS = ("tanh", "elu")


@dataclass(frozen=True)
class HyperparamSpec:
    """Typed, bounded, scale-annotated hyperparameter.

    >>> spec = HyperparamSpec("l2", 1e-6, 10.0, scale="log10")
    >>> spec.u_bounds
    (-6.0, 1.0)
    """

    name: str
    low: float
    high: float
    dtype: str = "real"
    scale: str = "linear"
    head_activation: str = "tanh"

    def __post_init__(self) -> None:
        if self.dtype not in DTYPES:
            raise ValueError(f"{self.name}: dtype must be one of {DTYPES}")
        if self.scale not in SCALES:
            raise ValueError(f"{self.name}: scale must be one of {SCALES}")
        if self.head_activation not in HEAD_ACTIVATIONS:
            raise ValueError(f"{self.name}: head_activation must be one of {HEAD_ACTIVATIONS}")
        if not self.low < self.high:
            raise ValueError(f"{self.name}: min must be below max")
        if self.scale == "log10" and self.low <= 0:
            raise ValueError(f"{self.name}: log10 scale requires min > 0")
        if self.dtype == "integer" and math.ceil(self.low) > math.floor(self.high):
            raise ValueError(f"{self.name}: no integer inside [{self.low}, {self.high}]")

    @property
    def is_integer(self) -> bool:
        return self.dtype == "integer"

    @property
    def u_bounds(self) -> tuple[float, float]:
        return self.to_u(self.low), self.to_u(self.high)

    def to_u(self, value: float) -> float:
        return math.log10(value) if self.scale == "log10" else float(value)

    def from_u(self, u: float) -> float:
        return 10.0**u if self.scale == "log10" else float(u)

    def snap(self, value: float) -> float:
        """Clamp into bounds; integer parameters go to the nearest in-bounds integer."""
        if self.is_integer:
            return float(min(max(round(value), math.ceil(self.low)), math.floor(self.high)))
        return float(min(max(value, self.low), self.high))

    def contains(self, value: float) -> bool:
        if not self.low <= value <= self.high:
            return False
        return not self.is_integer or float(value).is_integer()

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "dtype": self.dtype,
            "min": self.low,
            "max": self.high,
            "scale": self.scale,
            "head_activation": self.head_activation,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> HyperparamSpec:
        return cls(
            name=str(doc["name"]),
            low=float(doc["min"]),
            high=float(doc["max"]),
            dtype=str(doc.get("dtype", "real")),
            scale=str(doc.get("scale", "linear")),
            head_activation=str(doc.get("head_activation", "tanh")),
        )


def specs_to_json(specs: Sequence[HyperparamSpec]) -> str:
    return json.dumps([s.to_dict() for s in specs])


def specs_from_json(text: str) -> tuple[HyperparamSpec, ...]:
    return tuple(HyperparamSpec.from_dict(d) for d in json.loads(text))


@dataclass(frozen=True)
class HyperparamVector:
    """A concrete in-bounds assignment of an ordered schema.

    Raises:
        OutOfBoundsError: If a value is outside its bounds or a value of an
            integer parameter is not integral.
    """

    specs: tuple[HyperparamSpec, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.specs) != len(self.values):
            raise ValueError("specs and values differ in length")
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        for spec, value in zip(self.specs, values, strict=True):
            if not spec.contains(value):
                raise OutOfBoundsError(spec.name, value, spec.low, spec.high)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, index: int) -> float:
        return self.values[index]

    @classmethod
    def from_mapping(
        cls, specs: Sequence[HyperparamSpec], mapping: Mapping[str, float]
    ) -> HyperparamVector:
        return cls(tuple(specs), tuple(float(mapping[s.name]) for s in specs))

    @classmethod
    def from_u(cls, specs: Sequence[HyperparamSpec], u: Sequence[float]) -> HyperparamVector:
        """Build from working-scale coordinates, snapping every value into bounds."""
        return cls(
            tuple(specs),
            tuple(s.snap(s.from_u(x)) for s, x in zip(specs, u, strict=True)),
        )

    def u(self) -> np.ndarray:
        return np.array([s.to_u(v) for s, v in zip(self.specs, self.values, strict=True)])

    def with_value(self, index: int, value: float) -> HyperparamVector:
        values = list(self.values)
        values[index] = value
        return HyperparamVector(self.specs, tuple(values))

    def as_dict(self) -> dict[str, float]:
        return {s.name: v for s, v in zip(self.specs, self.values, strict=True)}


def sample_vector(specs: Sequence[HyperparamSpec], rng: np.random.Generator) -> HyperparamVector:
    """Uniform draw in the working scale of every parameter."""
    u = [rng.uniform(*s.u_bounds) for s in specs]
    return HyperparamVector.from_u(specs, u)


class Environment(ABC):
    """A learner to tune: ``evaluate(vector, split) -> accuracy in [0, 1]``.

    Subclasses implement :meth:`_score`; :meth:`evaluate` checks the vector
    against :attr:`specs` first and never clamps it. Environments hold no
    state that evaluations change, so concurrent calls are safe.
    """

    def __init__(self, specs: Sequence[HyperparamSpec], seed: int = 0) -> None:
        self.specs: tuple[HyperparamSpec, ...] = tuple(specs)
        self.seed = seed

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.specs)

    def evaluate(self, vector: HyperparamVector, split: SplitPair[Any] | None) -> float:
        """Accuracy of ``vector`` on ``split``.

        Raises:
            OutOfBoundsError: If ``vector`` violates the schema.
            ValueError: If ``vector`` was built for a different schema.
        """
        if tuple(s.name for s in vector.specs) != self.names:
            raise ValueError(f"vector schema {vector.as_dict()} does not match {self.names}")
        for spec, value in zip(self.specs, vector.values, strict=True):
            if not spec.contains(value):
                raise OutOfBoundsError(spec.name, value, spec.low, spec.high)
        score = self._score(vector, split)
        return float(min(max(score, 0.0), 1.0))

    @abstractmethod
    def _score(self, vector: HyperparamVector, split: SplitPair[Any] | None) -> float: ...


class CountingEnvironment(Environment):
    """Wraps an environment and counts evaluations."""

    def __init__(self, inner: Environment) -> None:
        super().__init__(inner.specs, inner.seed)
        self.inner = inner
        self.evaluations = 0
        self._lock = threading.Lock()

    def _score(self, vector: HyperparamVector, split: SplitPair[Any] | None) -> float:
        with self._lock:
            self.evaluations += 1
        return self.inner.evaluate(vector, split)


class AnalyticEnvironment(Environment):
    """Separable concave quadratic ``max(0, 1 - sum c_i (u_i - u*_i)^2)``."""

    def __init__(self, optimum: HyperparamVector, curvature: float | Sequence[float] = 1.0) -> None:
        super().__init__(optimum.specs)
        self.optimum = optimum
        self.curvature = np.broadcast_to(
            np.asarray(curvature, dtype=np.float64), (len(optimum),)
        ).copy()
        if np.any(self.curvature < 0):
            raise ValueError("curvature must be non-negative")

    def _score(self, vector: HyperparamVector, split: SplitPair[Any] | None) -> float:
        d = vector.u() - self.optimum.u()
        return max(0.0, 1.0 - float(np.sum(self.curvature * d * d)))


class RotatedEnvironment(Environment):
    """Two-parameter concave quadratic whose principal axes are rotated by ``angle``."""

    def __init__(
        self,
        optimum: HyperparamVector,
        angle: float,
        curvature: tuple[float, float] = (1.0, 0.25),
    ) -> None:
        if len(optimum) != 2:
            raise ValueError("rotated environments take exactly 2 parameters")
        super().__init__(optimum.specs)
        self.optimum = optimum
        self.angle = angle
        theta = math.radians(angle)
        self._rotation = np.array(
            [[math.cos(theta), math.sin(theta)], [-math.sin(theta), math.cos(theta)]]
        )
        self.curvature = np.asarray(curvature, dtype=np.float64)

    def _score(self, vector: HyperparamVector, split: SplitPair[Any] | None) -> float:
        r = self._rotation @ (vector.u() - self.optimum.u())
        return max(0.0, 1.0 - float(np.sum(self.curvature * r * r)))


def analytic_env(
    optimum: HyperparamVector, curvature: float | Sequence[float] = 1.0
) -> AnalyticEnvironment:
    """Surrogate with a known argmax at ``optimum``.

    >>> specs = (HyperparamSpec("x", -2.0, 2.0),)
    >>> env = analytic_env(HyperparamVector(specs, (0.0,)))
    >>> env.evaluate(HyperparamVector(specs, (0.5,)), None)
    0.75
    """
    return AnalyticEnvironment(optimum, curvature)


def rotated_env(
    optimum: HyperparamVector, angle: float, curvature: tuple[float, float] = (1.0, 0.25)
) -> RotatedEnvironment:
    """Non-separable 2-D surrogate; ``angle`` is in degrees."""
    return RotatedEnvironment(optimum, angle, curvature)


RIDGE_LOGISTIC_SPECS = (
    HyperparamSpec("learning_rate", 1e-4, 1.0, scale="log10"),
    HyperparamSpec("l2", 1e-6, 10.0, scale="log10"),
    HyperparamSpec("epochs", 1, 200, dtype="integer"),
)
BOOSTED_STUMPS_SPECS = (
    HyperparamSpec("n_rounds", 1, 300, dtype="integer"),
    HyperparamSpec("learning_rate", 1e-3, 1.0, scale="log10"),
    HyperparamSpec("max_bins", 2, 64, dtype="integer"),
)
TOY_LEARNERS = ("ridge_logistic", "boosted_stumps")


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _standardize(train: np.ndarray, test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd[sd == 0] = 1.0
    return (train - mu) / sd, (test - mu) / sd


class ToyLearnerEnvironment(Environment):
    """Small in-process learners on tabular splits.

    ``ridge_logistic``: softmax regression with an L2 penalty fitted by
    full-batch gradient descent on standardized features.
    ``boosted_stumps``: softmax gradient boosting with one depth-1
    regression tree per class and round, split candidates at ``max_bins``
    quantile thresholds per feature.
    """

    def __init__(self, kind: str, seed: int = 0) -> None:
        if kind not in TOY_LEARNERS:
            raise ValueError(f"unknown toy learner '{kind}', expected one of {TOY_LEARNERS}")
        specs = RIDGE_LOGISTIC_SPECS if kind == "ridge_logistic" else BOOSTED_STUMPS_SPECS
        super().__init__(specs, seed)
        self.kind = kind

    def _score(self, vector: HyperparamVector, split: SplitPair[Any] | None) -> float:
        if split is None or not isinstance(split.train, TabularDataset):
            raise TypeError(f"{self.kind} needs a tabular split")
        train, test = split.train, split.test
        if np.unique(train.labels).size < 2:
            raise DegenerateSplitError("train split holds a single class")
        if test.n_rows == 0:
            raise DegenerateSplitError("test split is empty")
        params = vector.as_dict()
        if self.kind == "ridge_logistic":
            predicted = _ridge_logistic(
                train, test.features, params["learning_rate"], params["l2"], int(params["epochs"])
            )
        else:
            predicted = _boosted_stumps(
                train,
                test.features,
                int(params["n_rounds"]),
                params["learning_rate"],
                int(params["max_bins"]),
            )
        return float(np.mean(predicted == test.labels))


def _ridge_logistic(
    train: TabularDataset, test_x: np.ndarray, lr: float, l2: float, epochs: int
) -> np.ndarray:
    x, tx = _standardize(train.features, test_x)
    n, k = train.n_rows, train.n_classes
    y = one_hot(train.labels, k)
    weight = np.zeros((x.shape[1], k))
    bias = np.zeros(k)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(epochs):
            residual = (_softmax(x @ weight + bias) - y) / n
            weight -= lr * (x.T @ residual + l2 * weight)
            bias -= lr * residual.sum(axis=0)
        if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
            # Diverged fit: fall back to the majority class.
            return np.full(tx.shape[0], np.bincount(train.labels, minlength=k).argmax())
        return np.argmax(tx @ weight + bias, axis=1)


def _boosted_stumps(
    train: TabularDataset, test_x: np.ndarray, n_rounds: int, lr: float, max_bins: int
) -> np.ndarray:
    x, n_features = train.features, train.n_features
    k = train.n_classes
    y = one_hot(train.labels, k)

    quantiles = np.linspace(0.0, 1.0, max_bins + 1)[1:-1]
    candidates = [np.unique(np.quantile(x[:, j], quantiles)) for j in range(n_features)]
    feature_of = np.concatenate([np.full(c.size, j) for j, c in enumerate(candidates)])
    threshold_of = np.concatenate(candidates) if candidates else np.zeros(0)
    # left[i, s] is True when row i falls left of split candidate s.
    left = x[:, feature_of] <= threshold_of
    n_left = left.sum(axis=0)
    n_right = x.shape[0] - n_left
    usable = (n_left > 0) & (n_right > 0)

    scores = np.zeros((x.shape[0], k))
    test_scores = np.zeros((test_x.shape[0], k))
    for _ in range(n_rounds):
        residual = y - _softmax(scores)
        for c in range(k):
            r = residual[:, c]
            left_sum = r @ left
            right_sum = r.sum() - left_sum
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = np.where(usable, left_sum**2 / n_left + right_sum**2 / n_right, -np.inf)
            if gain.size == 0 or not np.any(usable):
                scores[:, c] += lr * r.mean()
                test_scores[:, c] += lr * r.mean()
                continue
            s = int(np.argmax(gain))
            left_value = left_sum[s] / n_left[s]
            right_value = right_sum[s] / n_right[s]
            scores[:, c] += lr * np.where(left[:, s], left_value, right_value)
            test_left = test_x[:, feature_of[s]] <= threshold_of[s]
            test_scores[:, c] += lr * np.where(test_left, left_value, right_value)
    return np.argmax(test_scores, axis=1)


def toy_learner_env(kind: str, seed: int = 0) -> ToyLearnerEnvironment:
    """Environment wrapping one of the in-process toy learners."""
    return ToyLearnerEnvironment(kind, seed)


@dataclass(frozen=True)
class SearchResult:
    """Best vector found by a search and the evaluations it spent."""

    vector: HyperparamVector
    accuracy: float
    evaluations: int

    def as_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["vector"] = self.vector.as_dict()
        return doc


def random_search(
    env: Environment, split: SplitPair[Any] | None, budget: int, seed: int = 0
) -> SearchResult:
    """Seeded uniform search (in the working scale) keeping the strict best."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    rng = np.random.default_rng(seed)
    best: HyperparamVector | None = None
    best_accuracy = -math.inf
    for _ in range(budget):
        candidate = sample_vector(env.specs, rng)
        accuracy = env.evaluate(candidate, split)
        if accuracy > best_accuracy:
            best, best_accuracy = candidate, accuracy
    if best is None:
        raise RuntimeError("random search evaluated nothing")
    logger.debug(f"random search: best {best.as_dict()} -> {best_accuracy:.4f} ({budget} evals)")
    return SearchResult(best, best_accuracy, budget)
