"""Budgeted exit allocation, threshold calibration, and dynamic inference.

A single knob q > 0 describes the compute budget: exit k receives a
share of samples proportional to q**k, so small q pushes everything
through the first exits and large q defers to the deep ones. From that
one knob the module derives

  * integer head-counts per exit (floor for all but the last exit, the
    last absorbs the remainder),
  * a greedy allocation of a confidence table to exits (each exit takes
    its quota from the most confident samples still unassigned),
  * confidence thresholds that replay the same allocation as a simple
    "exit at the first threshold you clear" rule, and
  * the expected inference cost of a threshold policy under a per-exit
    cost vector.

Floor counts are computed in exact rational arithmetic on the float
value of q: mathematically-integer boundaries like q=1, K=3, N=6 must
come out as equal thirds, which naive float multiplication misses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .backbone import ExitOutputs
from .errors import DomainError, ShapeError
from .numkit import require_finite

# Threshold reported for an exit that was allocated zero samples: above any
# reachable confidence, so the replayed rule skips the exit entirely.
EMPTY_EXIT_SENTINEL = 1.5


def exit_fractions(q: float, num_exits: int) -> np.ndarray:
    """Budget fractions f[k] = q**(k+1) / sum_j q**(j+1), shape (K,)."""
    if num_exits < 1:
        raise DomainError(f"num_exits must be >= 1, got {num_exits}")
    if not (q > 0.0) or not math.isfinite(q):
        raise DomainError(f"q must be a positive finite number, got {q}")
    powers = np.power(float(q), np.arange(1, num_exits + 1, dtype=np.float64))
    return powers / powers.sum()


def allocation_sizes(q: float, num_exits: int, n: int) -> np.ndarray:
    """Integer quota per exit: floor(f_k * n) for k < K, remainder to exit K.

    Uses Fraction(q) so the floor is exact for the real number the float
    q denotes. Sizes are nonnegative and sum to n; the last exit's
    remainder is always at least floor(f_K * n).
    """
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    exit_fractions(q, num_exits)  # validates q and num_exits
    qf = Fraction(float(q))
    powers = [qf ** k for k in range(1, num_exits + 1)]
    total = sum(powers)
    sizes = np.empty(num_exits, dtype=np.int64)
    for k in range(num_exits - 1):
        sizes[k] = math.floor(powers[k] * n / total)
    sizes[num_exits - 1] = n - int(sizes[: num_exits - 1].sum())
    return sizes


@dataclass
class AllocationResult:
    """Partition of sample indices across exits.

    subsets[k] holds the indices assigned to exit k: for k < K-1 in
    descending confidence order (so the last entry is the marginal
    sample), for the final exit in ascending index order. sizes mirrors
    the subset lengths.
    """

    subsets: list[np.ndarray]
    sizes: np.ndarray


def allocate_meta(confidences, q: float) -> AllocationResult:
    """Greedy confidence-ordered partition of a (N, K) table.

    Exit k takes its quota from the most confident (per its own column)
    samples not yet claimed by exits 1..k-1; the last exit absorbs
    whatever remains. Ties break toward the lower sample index, so the
    result is deterministic.
    """
    conf = np.ascontiguousarray(confidences, dtype=np.float64)
    if conf.ndim != 2:
        raise ShapeError(f"confidence table must be 2-D, got ndim={conf.ndim}")
    require_finite(conf, "confidence table")
    n, num_exits = conf.shape
    if n < 1:
        raise DomainError("confidence table must have at least one row")
    sizes = allocation_sizes(q, num_exits, n)
    remaining = np.arange(n)
    subsets: list[np.ndarray] = []
    for k in range(num_exits - 1):
        take = int(sizes[k])
        # stable sort on negated confidence: descending value, ascending index
        order = np.argsort(-conf[remaining, k], kind="stable")
        subsets.append(remaining[order[:take]])
        keep = np.ones(remaining.shape[0], dtype=bool)
        keep[order[:take]] = False
        remaining = remaining[keep]
    subsets.append(remaining)
    return AllocationResult(subsets, sizes)


def calibrate_thresholds(val_confidences, q: float) -> np.ndarray:
    """Per-exit confidence thresholds replaying the greedy allocation.

    eps[k] is the confidence of the least confident sample exit k
    accepted; exits with an empty quota get EMPTY_EXIT_SENTINEL, and the
    final exit's threshold is 0 so nothing falls through. Replaying
    "exit at the first k with confidence >= eps[k]" on the calibration
    table reproduces the allocation exactly whenever no two samples tie
    at a quota boundary.
    """
    conf = np.ascontiguousarray(val_confidences, dtype=np.float64)
    alloc = allocate_meta(conf, q)
    num_exits = conf.shape[1]
    eps = np.zeros(num_exits)
    for k in range(num_exits - 1):
        subset = alloc.subsets[k]
        eps[k] = conf[subset[-1], k] if subset.size else EMPTY_EXIT_SENTINEL
    return eps


def exit_decisions(confidences, thresholds) -> np.ndarray:
    """Index of the first exit whose threshold each row clears, (B,) ints.

    The final exit accepts unconditionally regardless of its threshold.
    """
    conf = np.ascontiguousarray(confidences, dtype=np.float64)
    eps = np.asarray(thresholds, dtype=np.float64)
    if conf.ndim != 2 or eps.shape != (conf.shape[1],):
        raise ShapeError(f"confidences {conf.shape} and thresholds {eps.shape} do not align")
    passes = conf >= eps[None, :]
    passes[:, -1] = True
    return np.argmax(passes, axis=1)


@dataclass
class DynamicInference:
    """Outcome of threshold-based early exiting on one batch."""

    exit_indices: np.ndarray
    predictions: np.ndarray
    correct: np.ndarray
    exit_counts: np.ndarray

    @property
    def accuracy(self) -> float:
        return float(self.correct.mean())


def dynamic_infer(outputs: ExitOutputs, thresholds) -> DynamicInference:
    """Route each sample to its first confident-enough exit and score it."""
    k_star = exit_decisions(outputs.confidences, thresholds)
    rows = np.arange(outputs.batch_size)
    predictions = outputs.predictions[rows, k_star]
    correct = predictions == outputs.labels
    counts = np.bincount(k_star, minlength=outputs.num_exits)
    return DynamicInference(k_star, predictions, correct, counts)


def expected_cost(exit_counts, costs) -> float:
    """Average per-sample cost of an observed exit distribution.

    costs must be strictly increasing (deeper exits always pay more);
    counts must be nonnegative with a positive total.
    """
    counts = np.asarray(exit_counts, dtype=np.float64)
    c = np.asarray(costs, dtype=np.float64)
    if counts.ndim != 1 or counts.shape != c.shape:
        raise ShapeError(f"exit counts {counts.shape} and costs {c.shape} must match")
    if np.any(counts < 0):
        raise DomainError("exit counts must be nonnegative")
    total = counts.sum()
    if total <= 0:
        raise DomainError("exit counts must sum to a positive number")
    if np.any(np.diff(c) <= 0):
        raise DomainError("cost vector must be strictly increasing across exits")
    return float(np.dot(counts, c) / total)
