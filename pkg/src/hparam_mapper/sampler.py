"""Dissimilar sub-dataset sampling.

Subsets are sets of row indices of one corpus. Two subsets are *similar*
when their Jaccard similarity reaches a threshold ``delta``; a collection is
*independent* when no two members are similar. Drawing ``m`` uniform subsets
of size ``S`` from ``N`` rows and keeping the mutually dissimilar ones yields,
in expectation, ``m * p0 ** (m - 1)`` independent subsets, where ``p0`` is the
probability that two random subsets are dissimilar. :func:`plan_m` picks the
smallest ``m`` for which that expectation reaches the required count ``k``.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import hypergeom

from .errors import InfeasiblePlanError, InsufficientSamplesError
from .logging import get_logger

logger = get_logger("sampler")

SAMPLE_SET_FORMAT = "hparam-mapper/sample-set/1"


def jaccard(a: Iterable[int], b: Iterable[int]) -> float:
    """Jaccard similarity ``|a & b| / |a | b|`` of two index sets.

    Raises:
        ValueError: If both sets are empty.

    >>> jaccard({1, 2, 3}, {2, 3, 4})
    0.5
    """
    sa, sb = set(a), set(b)
    union = len(sa | sb)
    if union == 0:
        raise ValueError("jaccard similarity of two empty sets is undefined")
    return len(sa & sb) / union


def _dissimilar_overlaps(subset_size: int, delta: float) -> np.ndarray:
    overlap = np.arange(subset_size + 1)
    return overlap / (2 * subset_size - overlap) < delta


def compute_p0(n: int, subset_size: int, delta: float) -> float:
    """Probability that two independent uniform ``S``-subsets of ``N`` rows are dissimilar.

    The overlap ``O`` of two such subsets is hypergeometric(N, S, S) and
    their similarity is ``O / (2S - O)``, so ``p0 = P(O / (2S - O) < delta)``.

    >>> round(compute_p0(4, 2, 0.5), 12)
    0.833333333333
    """
    _check_sizes(n, subset_size)
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    ok = _dissimilar_overlaps(subset_size, delta)
    # ok is a prefix of True values: similarity grows with the overlap.
    largest = int(np.count_nonzero(ok)) - 1
    if largest < 0:
        return 0.0
    return float(hypergeom.cdf(largest, n, subset_size, subset_size))


def estimate_p0(n: int, subset_size: int, delta: float, n_pairs: int, seed: int = 0) -> float:
    """Monte-Carlo estimate of :func:`compute_p0` from ``n_pairs`` random pairs.

    Overlaps are drawn from the exact sampling process (two subsets without
    replacement), not from the hypergeometric law, so this is an independent
    cross-check.
    """
    _check_sizes(n, subset_size)
    rng = np.random.default_rng(seed)
    ok = _dissimilar_overlaps(subset_size, delta)
    hits = 0
    for _ in range(n_pairs):
        first = rng.choice(n, size=subset_size, replace=False)
        second = rng.choice(n, size=subset_size, replace=False)
        overlap = np.intersect1d(first, second, assume_unique=True).size
        hits += bool(ok[overlap])
    return hits / n_pairs


def expected_independent(m: int, p0: float) -> float:
    """Expected count ``m * p0 ** (m - 1)`` of independent subsets among ``m`` draws."""
    if m < 1:
        return 0.0
    if p0 <= 0.0:
        return 1.0 if m == 1 else 0.0
    return math.exp(math.log(m) + (m - 1) * math.log(p0))


def _peak(p0: float) -> int:
    """Integer ``m`` maximising :func:`expected_independent` (unimodal in ``m``)."""
    if p0 >= 1.0:
        raise ValueError("no finite peak for p0 = 1")
    if p0 <= 0.0:
        return 1
    real = -1.0 / math.log(p0)
    lo = max(1, math.floor(real))
    return max((lo, lo + 1), key=lambda m: expected_independent(m, p0))


def minimal_draws(p0: float, k: int) -> int:
    """Smallest ``m`` with ``m * p0 ** (m - 1) >= k``.

    >>> minimal_draws(1.0, 7), minimal_draws(0.5, 1)
    (7, 1)

    Raises:
        InfeasiblePlanError: If even the best ``m`` expects fewer than ``k``.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if not 0.0 <= p0 <= 1.0:
        raise ValueError("p0 must lie in [0, 1]")
    if p0 >= 1.0:
        return k
    peak = _peak(p0)
    best = expected_independent(peak, p0)
    if best < k:
        raise InfeasiblePlanError(k, best)
    lo, hi = 1, peak
    while lo < hi:
        mid = (lo + hi) // 2
        if expected_independent(mid, p0) >= k:
            hi = mid
        else:
            lo = mid + 1
    return lo


def _maximal_draws(p0: float, k: int, cap: int) -> int:
    """Largest ``m <= cap`` on the decreasing side still expecting ``k`` subsets."""
    if p0 >= 1.0:
        return cap
    lo = _peak(p0)
    hi = max(lo, cap)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if expected_independent(mid, p0) >= k:
            lo = mid
        else:
            hi = mid - 1
    return min(lo, cap)


@dataclass(frozen=True)
class SamplePlan:
    """How many subsets to draw from a corpus.

    Attributes:
        n: Corpus size ``N``.
        subset_size: Subset size ``S``.
        k: Required number of independent subsets.
        delta: Jaccard threshold.
        m: Planned number of draws.
        p0: Pairwise dissimilarity probability.
        m_min: Smallest feasible ``m`` (``m`` may exceed it by the margin).
    """

    n: int
    subset_size: int
    k: int
    delta: float
    m: int
    p0: float
    m_min: int

    @property
    def expected(self) -> float:
        return expected_independent(self.m, self.p0)


def plan_m(n: int, subset_size: int, k: int, delta: float, margin: float = 1.0) -> SamplePlan:
    """Plan the number of draws for ``k`` independent subsets.

    Args:
        n: Corpus size.
        subset_size: Size of every subset (must be below ``n``).
        k: Required number of independent subsets.
        delta: Jaccard threshold in ``(0, 1)``.
        margin: Multiplier (>= 1) applied to the minimal ``m``; the result is
            capped at the largest ``m`` that still expects ``k`` subsets.

    Raises:
        InfeasiblePlanError: If no ``m`` expects ``k`` independent subsets.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if margin < 1.0:
        raise ValueError("margin must be >= 1")
    p0 = compute_p0(n, subset_size, delta)
    m_min = minimal_draws(p0, k)
    m = m_min
    if margin > 1.0:
        m = max(m_min, _maximal_draws(p0, k, math.ceil(m_min * margin)))
    plan = SamplePlan(n, subset_size, k, delta, m, p0, m_min)
    logger.info(f"sample plan: N={n} S={subset_size} k={k} delta={delta} p0={p0:.6g} m={m}")
    return plan


@dataclass(frozen=True)
class SampleSet:
    """Mutually dissimilar subsets of one corpus, as sorted row-index tuples."""

    subsets: tuple[tuple[int, ...], ...]
    source: str = ""
    delta: float = 1.0

    def __len__(self) -> int:
        return len(self.subsets)

    def max_similarity(self) -> float:
        """Largest pairwise Jaccard similarity (0 for fewer than two subsets)."""
        sets = [set(s) for s in self.subsets]
        return max(
            (jaccard(a, b) for i, a in enumerate(sets) for b in sets[i + 1 :]),
            default=0.0,
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": SAMPLE_SET_FORMAT,
                "source": self.source,
                "delta": self.delta,
                "subsets": [list(s) for s in self.subsets],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> SampleSet:
        doc = json.loads(text)
        if doc.get("format") != SAMPLE_SET_FORMAT:
            raise ValueError(f"unknown sample set format {doc.get('format')!r}")
        return cls(
            subsets=tuple(tuple(int(i) for i in s) for s in doc["subsets"]),
            source=str(doc["source"]),
            delta=float(doc["delta"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> SampleSet:
        return cls.from_json(Path(path).read_text())


def sample_independent(
    n: int, plan: SamplePlan, seed: int = 0, source: str = ""
) -> SampleSet:
    """Draw ``plan.m`` subsets and greedily keep the mutually dissimilar ones.

    A draw is kept when its similarity to every previously kept subset is
    below ``plan.delta``. Draw order fixes the outcome, so equal seeds give
    equal sample sets.

    Args:
        n: Number of rows of the corpus (``len(dataset)``).
        plan: Output of :func:`plan_m`; ``plan.n`` must equal ``n``.
        seed: Seed of the draw sequence.
        source: Corpus identifier recorded in the result.

    Raises:
        InsufficientSamplesError: If fewer than ``plan.k`` subsets survive.
    """
    if n != plan.n:
        raise ValueError(f"plan was made for {plan.n} rows, corpus has {n}")
    rng = np.random.default_rng(seed)
    size = plan.subset_size
    # Rows of every kept subset, concatenated; owners[i] is the subset rows[i] came from.
    rows = np.empty(0, dtype=np.int64)
    owners = np.empty(0, dtype=np.int64)
    kept: list[tuple[int, ...]] = []
    for _ in range(plan.m):
        draw = np.sort(rng.choice(n, size=size, replace=False))
        if kept:
            overlap = np.bincount(owners[np.isin(rows, draw)], minlength=len(kept))
            similarity = overlap / (2 * size - overlap)
            if np.any(similarity >= plan.delta):
                continue
        rows = np.concatenate([rows, draw])
        owners = np.concatenate([owners, np.full(size, len(kept), dtype=np.int64)])
        kept.append(tuple(int(i) for i in draw))
    logger.info(f"kept {len(kept)} of {plan.m} draws (delta={plan.delta})")
    if len(kept) < plan.k:
        raise InsufficientSamplesError(len(kept), plan.k)
    return SampleSet(subsets=tuple(kept), source=source, delta=plan.delta)


def _check_sizes(n: int, subset_size: int) -> None:
    if subset_size < 1:
        raise ValueError("subset size must be positive")
    if subset_size >= n:
        raise ValueError(f"subset size {subset_size} must be below corpus size {n}")
