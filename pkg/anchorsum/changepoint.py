"""
Penalized change-point detection on frame-embedding sequences.

The segment cost is the within-segment sum of squared L2 distances to the
segment mean. ``pelt`` and ``brute_force_segment`` share one cost evaluator
and one tie-breaking rule (earliest optimal last change point), so they
return identical change sets.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence

import numpy as np

from anchorsum.embedding import SPACE_FRAME, EmbeddingVector
from anchorsum.errors import ConfigError, InvalidInput, InvalidPenalty, InvalidRange, OracleLimit

ORACLE_LIMIT = 200


@dataclass(frozen=True, eq=False)
class Signal:
    """An ordered sequence of frame-space embeddings as an (n, dim) array."""

    points: np.ndarray

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise InvalidInput(f"Signal needs at least one point, got shape {self.points.shape}")

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    @classmethod
    def from_vectors(cls, vectors: Sequence[EmbeddingVector]) -> "Signal":
        if not vectors:
            raise InvalidInput("Signal needs at least one point")
        if any(v.space != SPACE_FRAME for v in vectors):
            raise ConfigError("Change-point detection runs on frame-space embeddings only")
        if len({v.dim for v in vectors}) != 1:
            raise InvalidInput("All signal points must share one dimension")
        return cls(np.vstack([v.values for v in vectors]))

    @classmethod
    def from_array(cls, values) -> "Signal":
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        return cls(arr)


@dataclass
class ChangePointSet:
    indices: List[int]
    penalty: float
    cost_total: float

    def to_dict(self) -> Dict[str, Any]:
        return {"indices": list(self.indices), "penalty": self.penalty, "cost_total": self.cost_total}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ChangePointSet":
        return cls([int(i) for i in data["indices"]], float(data["penalty"]), float(data["cost_total"]))

    def segments(self, n: int) -> List[range]:
        """Index ranges of the segments the change points cut [0, n) into."""
        bounds = [0] + list(self.indices) + [n]
        return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def segment_cost(signal: Signal, a: int, b: int) -> float:
    """
    Sum of squared distances to the mean over points [a, b).

    Uses compensated summation; a segment of identical points costs exactly 0.

    Raises:
        InvalidRange: Unless 0 <= a < b <= n
    """
    if not (0 <= a < b <= signal.n):
        raise InvalidRange(f"Invalid segment [{a}, {b}) for a signal of length {signal.n}")
    seg = signal.points[a:b]
    if np.all(seg == seg[0]):
        return 0.0
    mean = np.array([math.fsum(col) for col in seg.T]) / (b - a)
    dev = seg - mean
    return math.fsum((dev * dev).ravel())


def default_penalty(signal: Signal) -> float:
    """2 * sigma^2 * log(n), sigma^2 the median per-dimension variance of first differences."""
    if signal.n < 2:
        return float(np.finfo(float).eps)
    diffs = np.diff(signal.points, axis=0)
    sigma2 = float(np.median(np.var(diffs, axis=0)))
    return max(2.0 * sigma2 * math.log(signal.n), float(np.finfo(float).eps))


class _CostEvaluator:
    """Vectorized cost of [s, t) for many starts s, via prefix sums."""

    def __init__(self, signal: Signal):
        x = signal.points - signal.points.mean(axis=0)
        n = signal.n
        self.s1 = np.vstack([np.zeros(signal.dim), np.cumsum(x, axis=0)])
        self.s2 = np.concatenate([[0.0], np.cumsum(np.einsum("ij,ij->i", x, x))])
        # run_start[i]: first index of the run of identical points ending at i.
        self.run_start = np.zeros(n, dtype=np.int64)
        for i in range(1, n):
            same = np.array_equal(signal.points[i], signal.points[i - 1])
            self.run_start[i] = self.run_start[i - 1] if same else i

    def costs(self, starts: np.ndarray, t: int) -> np.ndarray:
        lengths = (t - starts).astype(np.float64)
        delta = self.s1[t] - self.s1[starts]
        values = (self.s2[t] - self.s2[starts]) - np.einsum("ij,ij->i", delta, delta) / lengths
        values = np.maximum(values, 0.0)
        return np.where(starts >= self.run_start[t - 1], 0.0, values)


def pelt(signal: Signal, penalty: float) -> ChangePointSet:
    """
    Exact penalized segmentation with PELT pruning.

    Raises:
        InvalidInput: When the signal has fewer than two points
        InvalidPenalty: When penalty <= 0
    """
    if signal.n < 2:
        raise InvalidInput("pelt needs a signal of at least two points")
    return _optimal_partition(signal, penalty, prune=True)


def brute_force_segment(signal: Signal, penalty: float) -> ChangePointSet:
    """
    Exact penalized segmentation by the unpruned O(n^2) dynamic program.

    Raises:
        OracleLimit: When n exceeds ORACLE_LIMIT
        InvalidPenalty: When penalty <= 0
    """
    if signal.n > ORACLE_LIMIT:
        raise OracleLimit(f"brute_force_segment is limited to n <= {ORACLE_LIMIT}, got {signal.n}")
    return _optimal_partition(signal, penalty, prune=False)


def _optimal_partition(signal: Signal, penalty: float, prune: bool) -> ChangePointSet:
    if not penalty > 0 or not math.isfinite(penalty):
        raise InvalidPenalty(f"Penalty must be a positive finite number, got {penalty}")

    n = signal.n
    if n == 1:
        return ChangePointSet([], float(penalty), 0.0)

    evaluator = _CostEvaluator(signal)
    best = np.empty(n + 1)
    best[0] = -penalty
    last = np.zeros(n + 1, dtype=np.int64)
    candidates = np.array([0], dtype=np.int64)

    for t in range(1, n + 1):
        starts = candidates if prune else np.arange(t, dtype=np.int64)
        totals = best[starts] + evaluator.costs(starts, t) + penalty
        k = int(np.argmin(totals))
        best[t] = totals[k]
        last[t] = starts[k]
        if prune:
            # Keep s while F(s) + C(s, t) <= F(t), with a tolerance for rounding.
            eps = 1e-9 * (1.0 + abs(best[t]))
            keep = (totals - penalty) <= best[t] + eps
            candidates = np.append(starts[keep], t)

    indices = []
    t = n
    while t > 0:
        s = int(last[t])
        if s > 0:
            indices.append(s)
        t = s
    indices.reverse()

    bounds = [0] + indices + [n]
    cost_total = math.fsum(segment_cost(signal, a, b) for a, b in zip(bounds[:-1], bounds[1:]))
    return ChangePointSet(indices, float(penalty), cost_total + penalty * len(indices))
