"""Local refinement of hyperparameter vectors (LOPT).

Starting from a (usually predicted) vector, coordinates are refined by
stride-halving hill climbing:

* ``mc`` climbs one coordinate: probe ``v - stride`` then ``v + stride`` in
  the working scale, move on strict improvement, halve the stride otherwise,
  stop once the stride drops to ``epsilon_prime``.
* ``dmc`` alternates ``mc`` on two neighbouring coordinates until both last
  moves are small.
* the recursive sweep splits ``[l, r]`` at ``(l + r) // 2`` and re-runs both
  halves until the summed last-move magnitudes of the range drop to
  ``epsilon_total``.

The last-move magnitude of every coordinate is kept in a :class:`SegmentTree`
so the convergence check of any range costs ``O(log n)``.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, NamedTuple

from .datasets import SplitPair
from .environments import Environment, HyperparamVector
from .logging import get_logger

logger = get_logger("lopt")

UNSEEN = math.inf


class SegmentTree:
    """Sum segment tree over ``n`` non-negative leaves.

    Stored as an implicit binary heap of ``2 * capacity`` nodes with the
    root at index 1 and leaves at ``capacity .. capacity + n - 1``; padding
    leaves hold 0.

    >>> tree = SegmentTree(3, initial=0.0)
    >>> tree.update(1, 0.5)
    >>> tree.range_sum(0, 2)
    0.5
    """

    def __init__(self, n: int, initial: float = UNSEEN) -> None:
        if n < 1:
            raise ValueError("a segment tree needs at least one leaf")
        if initial < 0:
            raise ValueError("leaf values must be non-negative")
        self._n = n
        capacity = 1
        while capacity < n:
            capacity <<= 1
        self._capacity = capacity
        self._value = [0.0] * (2 * capacity)
        self._value[capacity : capacity + n] = [float(initial)] * n
        for node in range(capacity - 1, 0, -1):
            self._value[node] = self._value[node << 1] + self._value[node << 1 | 1]

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, index: int) -> float:
        self._check_index(index)
        return self._value[self._capacity + index]

    def update(self, index: int, value: float) -> None:
        """Replace leaf ``index`` with ``value`` and repair its ancestors."""
        self._check_index(index)
        if value < 0:
            raise ValueError("leaf values must be non-negative")
        node = index + self._capacity
        self._value[node] = float(value)
        node >>= 1
        while node >= 1:
            self._value[node] = self._value[node << 1] + self._value[node << 1 | 1]
            node >>= 1

    def range_sum(self, left: int, right: int) -> float:
        """Sum of leaves ``left..right`` inclusive."""
        if left > right:
            raise ValueError("range_sum needs left <= right")
        self._check_index(left)
        self._check_index(right)
        total = 0.0
        lo = left + self._capacity
        hi = right + self._capacity + 1
        while lo < hi:
            if lo & 1:
                total += self._value[lo]
                lo += 1
            if hi & 1:
                hi -= 1
                total += self._value[hi]
            lo >>= 1
            hi >>= 1
        return total

    def check_over(self, left: int, right: int, epsilon_total: float) -> bool:
        """Whether the range ``left..right`` has converged."""
        return self.range_sum(left, right) <= epsilon_total

    def _check_index(self, index: int) -> None:
        if not 0 <= index < self._n:
            raise IndexError(f"leaf {index} out of range [0, {self._n})")


@dataclass(frozen=True)
class LoptConfig:
    """Thresholds and caps of the local search.

    Attributes:
        epsilon: Initial probe stride, in working-scale units.
        epsilon_prime: A coordinate climb stops once its stride is at or
            below this value.
        epsilon_total: A range has converged when the summed last-move
            magnitudes of its coordinates are at or below this value.
        max_mc_iters: Probe rounds per coordinate climb.
        max_sweeps: Re-runs of any ``dmc`` pair or recursive range.
        eval_budget: Total environment evaluations, ``None`` for no limit.
    """

    epsilon: float = 0.1
    epsilon_prime: float = 1e-4
    epsilon_total: float = 1e-3
    max_mc_iters: int = 200
    max_sweeps: int = 50
    eval_budget: int | None = None

    def __post_init__(self) -> None:
        for name in ("epsilon", "epsilon_prime", "epsilon_total"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_mc_iters < 1 or self.max_sweeps < 1:
            raise ValueError("max_mc_iters and max_sweeps must be >= 1")
        if self.eval_budget is not None and self.eval_budget < 1:
            raise ValueError("eval_budget must be >= 1")


class TraceRow(NamedTuple):
    step: int
    coordinate: str
    probe_value: float
    accuracy: float


@dataclass(frozen=True)
class LoptResult:
    """Refined vector with bookkeeping.

    ``exhausted`` is set when the evaluation budget ran out; ``vector`` is
    then the best incumbent.
    """

    vector: HyperparamVector
    accuracy: float
    initial_accuracy: float
    evaluations: int
    exhausted: bool = False
    trace: tuple[TraceRow, ...] = ()


class _BudgetExhausted(Exception):
    pass


class LocalOptimizer:
    """Stateful search over one environment, split and start vector."""

    def __init__(
        self,
        start: HyperparamVector,
        env: Environment,
        split: SplitPair[Any] | None,
        config: LoptConfig | None = None,
        tree: SegmentTree | None = None,
        trace: bool = False,
    ) -> None:
        self.env = env
        self.split = split
        self.config = config or LoptConfig()
        self.tree = tree if tree is not None else SegmentTree(len(start))
        if len(self.tree) != len(start):
            raise ValueError("segment tree and vector differ in length")
        self.vector = start
        self.evaluations = 0
        self.exhausted = False
        self._record = trace
        self._trace: list[TraceRow] = []
        self.accuracy = self._evaluate(start, coordinate="")
        self.initial_accuracy = self.accuracy

    def _evaluate(
        self, vector: HyperparamVector, coordinate: str, value: float = math.nan
    ) -> float:
        budget = self.config.eval_budget
        if budget is not None and self.evaluations >= budget:
            self.exhausted = True
            raise _BudgetExhausted
        accuracy = self.env.evaluate(vector, self.split)
        self.evaluations += 1
        if self._record:
            self._trace.append(TraceRow(self.evaluations, coordinate, value, accuracy))
        return accuracy

    def _probe(self, x: int, direction: int, stride: float) -> tuple[float, bool]:
        """Snapped probe value and whether the integer fallback step was used."""
        spec = self.vector.specs[x]
        current = self.vector[x]
        value = spec.snap(spec.from_u(spec.to_u(current) + direction * stride))
        if spec.is_integer and value == current:
            return spec.snap(current + direction), True
        return value, False

    def mc(self, x: int) -> None:
        """Hill-climb coordinate ``x``; record the move size in the tree."""
        cfg = self.config
        spec = self.vector.specs[x]
        start_u = spec.to_u(self.vector[x])
        stride = cfg.epsilon
        try:
            for _ in range(cfg.max_mc_iters):
                if stride <= cfg.epsilon_prime:
                    break
                moved = False
                unit_steps = 0
                for direction in (-1, 1):
                    value, unit = self._probe(x, direction, stride)
                    unit_steps += unit
                    if value == self.vector[x]:
                        continue
                    candidate = self.vector.with_value(x, value)
                    accuracy = self._evaluate(candidate, spec.name, value)
                    if accuracy > self.accuracy:
                        self.vector, self.accuracy = candidate, accuracy
                        moved = True
                        break
                if not moved:
                    if unit_steps == 2:
                        break
                    stride /= 2
        finally:
            self.tree.update(x, abs(spec.to_u(self.vector[x]) - start_u))

    def dmc(self, left: int, right: int) -> None:
        """Alternate climbs on ``left`` and ``right`` until the pair converges."""
        for _ in range(self.config.max_sweeps):
            if self.tree.check_over(left, right, self.config.epsilon_total):
                break
            self.mc(left)
            self.mc(right)

    def func(self, left: int, right: int) -> None:
        """Recursive divide-and-conquer sweep over ``left..right``."""
        if left == right:
            self.mc(left)
            return
        if right == left + 1:
            self.dmc(left, right)
            return
        mid = (left + right) // 2
        for _ in range(self.config.max_sweeps):
            if self.tree.check_over(left, right, self.config.epsilon_total):
                break
            before = self.evaluations
            self.func(left, mid)
            self.func(mid + 1, right)
            if self.evaluations == before:
                break

    def result(self) -> LoptResult:
        return LoptResult(
            vector=self.vector,
            accuracy=self.accuracy,
            initial_accuracy=self.initial_accuracy,
            evaluations=self.evaluations,
            exhausted=self.exhausted,
            trace=tuple(self._trace),
        )

    def run(self, step: str, *args: int) -> LoptResult:
        try:
            getattr(self, step)(*args)
        except _BudgetExhausted:
            logger.info(f"evaluation budget of {self.config.eval_budget} exhausted")
        return self.result()


def mc(
    p: HyperparamVector,
    x: int,
    env: Environment,
    split: SplitPair[Any] | None,
    config: LoptConfig | None = None,
    tree: SegmentTree | None = None,
) -> LoptResult:
    """Single-coordinate climb of ``p`` along coordinate ``x``.

    The returned accuracy is never below that of ``p``.
    """
    if not 0 <= x < len(p):
        raise IndexError(f"coordinate {x} out of range")
    return LocalOptimizer(p, env, split, config, tree).run("mc", x)


def dmc(
    p: HyperparamVector,
    left: int,
    env: Environment,
    split: SplitPair[Any] | None,
    config: LoptConfig | None = None,
    tree: SegmentTree | None = None,
) -> LoptResult:
    """Alternating climb on coordinates ``left`` and ``left + 1``."""
    if not 0 <= left < len(p) - 1:
        raise IndexError(f"pair ({left}, {left + 1}) out of range")
    return LocalOptimizer(p, env, split, config, tree).run("dmc", left, left + 1)


def lopt(
    p0: HyperparamVector,
    env: Environment,
    split: SplitPair[Any] | None,
    config: LoptConfig | None = None,
    trace: bool = False,
) -> LoptResult:
    """Refine ``p0`` on ``env``; the result is never worse than ``p0``.

    Args:
        p0: In-bounds start vector.
        env: Environment to maximise.
        split: Data split handed to every evaluation.
        config: Thresholds and caps.
        trace: Record every evaluation as a :class:`TraceRow`.
    """
    optimizer = LocalOptimizer(p0, env, split, config, trace=trace)
    result = optimizer.run("func", 0, len(p0) - 1)
    logger.debug(
        f"lopt: accuracy {result.initial_accuracy:.4f} -> {result.accuracy:.4f} "
        f"in {result.evaluations} evaluations"
    )
    return result


def write_trace_csv(trace: Sequence[TraceRow], path: str | Path) -> None:
    """Write a trace as ``step,coordinate,probe_value,accuracy`` CSV."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(TraceRow._fields)
        for row in trace:
            writer.writerow([row.step, row.coordinate, repr(row.probe_value), repr(row.accuracy)])
