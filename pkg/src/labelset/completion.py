"""Removing null regions: baseline fill and accretive completion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    CLASS,
    INCLUDE_ALL,
    PosteriorModel,
    PredictionSet,
    ThresholdVector,
    membership,
    predict_set,
)
from .errors import InvalidArgumentError

SUM_LE_ONE = "sum <= 1"
NO_CANDIDATE = "no candidate"
ITERATION_CAP = "iteration cap"


def baseline_fill(model: PosteriorModel, thresholds: ThresholdVector, x) -> PredictionSet:
    """Level-set prediction, replaced by the posterior argmax when empty."""
    s = predict_set(model, thresholds, x)
    if not s.is_empty:
        return s
    p = np.asarray(model.predict_proba(np.asarray(x, dtype=float).reshape(-1))).reshape(-1)
    return PredictionSet((int(np.argmax(p)) + 1,))


def fill_membership(probs, thresholds: ThresholdVector) -> np.ndarray:
    """Vectorised :func:`baseline_fill` on a posterior matrix."""
    P = np.atleast_2d(np.asarray(probs, dtype=float))
    M = membership(P, thresholds)
    empty = ~M.any(axis=1)
    # argmax returns the first maximum, i.e. the smallest label on ties
    M[np.flatnonzero(empty), np.argmax(P[empty], axis=1)] = True
    return M


def empirical_ambiguity(score_matrix, thresholds) -> float:
    """Mean prediction-set size over the rows of a posterior matrix."""
    P = np.atleast_2d(np.asarray(score_matrix, dtype=float))
    if P.shape[0] < 1:
        raise InvalidArgumentError("need at least one row")
    t = thresholds if isinstance(thresholds, ThresholdVector) else ThresholdVector.class_specific(thresholds)
    return float(membership(P, t).sum() / P.shape[0])


@dataclass
class AccretiveTrace:
    """Iteration log of :func:`accretive_complete`.

    Row 0 is the starting point (``chosen`` is None there).
    """

    epsilon: float
    chosen: list = field(default_factory=list)
    thresholds: list = field(default_factory=list)
    ambiguity: list = field(default_factory=list)
    reason: str = ""

    @property
    def iterations(self) -> int:
        return len(self.chosen) - 1

    def write_csv(self, path) -> None:
        K = len(self.thresholds[0]) if self.thresholds else 0
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "chosen_class", *(f"t_{y}" for y in range(1, K + 1)),
                        "ambiguity", "sum_t"])
            for s, (c, t, a) in enumerate(zip(self.chosen, self.thresholds, self.ambiguity)):
                w.writerow([s, "" if c is None else c, *(repr(v) for v in t), repr(a),
                            repr(float(sum(t)))])


class _ColumnCounter:
    """Counts ``#{i : P[i, y] >= t}`` per column via sorted columns."""

    def __init__(self, P: np.ndarray):
        self.sorted = np.sort(P, axis=0)
        self.n = P.shape[0]

    def count(self, y: int, t: float) -> int:
        return int(self.n - np.searchsorted(self.sorted[:, y], t, side="left"))


def accretive_complete(t0: ThresholdVector, score_matrix, epsilon: float = 0.01,
                       iteration_cap: int | None = None):
    """Greedily lower class thresholds until they sum to at most one.

    Each step lowers one class threshold by ``epsilon * t0[y]``, picking the
    class whose decrement gives the smallest empirical ambiguity (smallest
    label on ties). Classes whose next decrement would reach zero are not
    candidates.

    Returns
    -------
    (ThresholdVector, AccretiveTrace)
    """
    if t0.mode != CLASS:
        raise InvalidArgumentError("accretive completion expects class-specific thresholds")
    base = np.array(t0.values, dtype=float)
    if np.any(base == INCLUDE_ALL) or np.any(base <= 0):
        raise InvalidArgumentError("starting thresholds must be finite and positive")
    if not 0.0 < epsilon < 1.0:
        raise InvalidArgumentError(f"epsilon must lie in (0, 1), got {epsilon}")
    P = np.atleast_2d(np.asarray(score_matrix, dtype=float))
    K = base.size
    if P.shape[1] != K:
        raise InvalidArgumentError(f"score matrix has {P.shape[1]} columns, thresholds {K}")
    if iteration_cap is None:
        iteration_cap = math.ceil(K / epsilon) + K

    counter = _ColumnCounter(P)
    steps = np.zeros(K, dtype=np.int64)

    def level(y: int, c: int) -> float:
        return float(base[y] * (1.0 - c * epsilon))

    t = base.copy()
    counts = np.array([counter.count(y, t[y]) for y in range(K)])
    trace = AccretiveTrace(epsilon)
    trace.chosen.append(None)
    trace.thresholds.append(t.tolist())
    trace.ambiguity.append(counts.sum() / counter.n)

    while t.sum() > 1.0:
        if trace.iterations >= iteration_cap:
            trace.reason = ITERATION_CAP
            break
        best, best_total, best_count = -1, None, 0
        total = int(counts.sum())
        for y in range(K):
            nxt = level(y, steps[y] + 1)
            if not nxt > 0.0:
                continue
            c = counter.count(y, nxt)
            cand = total - counts[y] + c
            if best_total is None or cand < best_total:
                best, best_total, best_count = y, cand, c
        if best < 0:
            trace.reason = NO_CANDIDATE
            break
        steps[best] += 1
        t[best] = level(best, steps[best])
        counts[best] = best_count
        trace.chosen.append(best + 1)
        trace.thresholds.append(t.tolist())
        trace.ambiguity.append(best_total / counter.n)
    else:
        trace.reason = SUM_LE_ONE

    out = t0.replace(t.tolist(), completion="accretive", epsilon=epsilon,
                     completion_reason=trace.reason, completion_iterations=trace.iterations)
    return out, trace


def total_coverage_complete(t_alpha: float, K: int) -> float:
    """``min(1/K, t_alpha)``: a single threshold that never yields an empty set."""
    if K < 2:
        raise InvalidArgumentError("K must be >= 2")
    if not 0.0 <= t_alpha <= 1.0:
        raise InvalidArgumentError("t_alpha must lie in [0, 1]")
    return min(1.0 / K, float(t_alpha))
