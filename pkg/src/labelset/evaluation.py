"""Held-out metrics for set-valued predictions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import PredictionSet
from .errors import InvalidArgumentError

#: Marker for the coverage of a class that has no test samples.
UNDEFINED = "undefined"


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    class_coverage: tuple  # float per class, or UNDEFINED
    total_coverage: float
    ambiguity: float
    null_fraction: float
    size_histogram: np.ndarray
    cooccurrence: np.ndarray
    n: int
    class_names: tuple[str, ...] | None = None

    @property
    def class_count(self) -> int:
        return self.cooccurrence.shape[0]

    def metrics(self) -> list[tuple[str, str, object]]:
        """Rows of (metric, name, value)."""
        names = self.class_names or tuple(str(y) for y in range(1, self.class_count + 1))
        rows = [("n", "", self.n),
                ("total_coverage", "", self.total_coverage),
                ("ambiguity", "", self.ambiguity),
                ("null_fraction", "", self.null_fraction)]
        rows += [("class_coverage", nm, c) for nm, c in zip(names, self.class_coverage)]
        rows += [("set_size_count", str(s), int(c)) for s, c in enumerate(self.size_histogram)]
        return rows

    def write_csv(self, metrics_path, matrix_path) -> None:
        with Path(metrics_path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "name", "value"])
            for m, nm, v in self.metrics():
                w.writerow([m, nm, repr(v) if isinstance(v, float) else v])
        names = self.class_names or tuple(str(y) for y in range(1, self.class_count + 1))
        with Path(matrix_path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["", *names])
            for nm, row in zip(names, self.cooccurrence):
                w.writerow([nm, *(int(v) for v in row)])

    def to_text(self) -> str:
        names = self.class_names or tuple(str(y) for y in range(1, self.class_count + 1))
        fmt = lambda c: c if c == UNDEFINED else f"{c:.3f}"  # noqa: E731
        lines = [
            f"n               {self.n}",
            f"total coverage  {self.total_coverage:.3f}",
            f"ambiguity       {self.ambiguity:.3f}",
            f"null fraction   {self.null_fraction:.3f}",
            "class coverage  " + "  ".join(f"{nm}:{fmt(c)}" for nm, c in zip(names, self.class_coverage)),
            "set sizes       " + "  ".join(f"{s}:{int(c)}" for s, c in enumerate(self.size_histogram)),
            "co-occurrence",
        ]
        width = max(6, *(len(n) + 1 for n in names))
        lines.append(" " * width + "".join(f"{n:>{width}}" for n in names))
        for nm, row in zip(names, self.cooccurrence):
            lines.append(f"{nm:>{width}}" + "".join(f"{int(v):>{width}}" for v in row))
        return "\n".join(lines)


def _masks(predictions: Sequence[PredictionSet], K: int) -> np.ndarray:
    M = np.zeros((len(predictions), K), dtype=bool)
    for i, s in enumerate(predictions):
        for y in s:
            if y > K:
                raise InvalidArgumentError(f"prediction contains label {y} > K={K}")
            M[i, y - 1] = True
    return M


def size_histogram(predictions: Sequence[PredictionSet], class_count: int | None = None) -> np.ndarray:
    """Counts of prediction-set sizes ``0..K``.

    ``K`` defaults to the largest label appearing in any set.
    """
    sizes = np.array([len(s) for s in predictions], dtype=np.int64)
    K = class_count
    if K is None:
        K = max((max(s, default=0) for s in predictions), default=0)
    return np.bincount(sizes, minlength=K + 1)


def evaluate(predictions: Sequence[PredictionSet], labels, class_count: int | None = None,
             class_names=None) -> EvaluationReport:
    """Coverage, ambiguity, null fraction, set-size histogram and co-occurrence."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    predictions = [s if isinstance(s, PredictionSet) else PredictionSet(tuple(s)) for s in predictions]
    if len(predictions) != labels.size:
        raise InvalidArgumentError(
            f"{len(predictions)} predictions but {labels.size} labels")
    if labels.size == 0:
        raise InvalidArgumentError("nothing to evaluate")
    K = class_count or int(max(labels.max(), max((max(s.members, default=0) for s in predictions))))
    if labels.min() < 1 or labels.max() > K:
        raise InvalidArgumentError(f"labels must lie in 1..{K}")
    M = _masks(predictions, K)
    n = labels.size
    hit = M[np.arange(n), labels - 1]
    cov = []
    for y in range(1, K + 1):
        rows = labels == y
        cov.append(float(hit[rows].mean()) if rows.any() else UNDEFINED)
    Mi = M.astype(np.int64)
    return EvaluationReport(
        class_coverage=tuple(cov),
        total_coverage=float(hit.mean()),
        ambiguity=float(M.sum() / n),
        null_fraction=float(np.mean(~M.any(axis=1))),
        size_histogram=np.bincount(M.sum(axis=1), minlength=K + 1),
        cooccurrence=Mi.T @ Mi,
        n=n,
        class_names=tuple(class_names) if class_names is not None else None,
    )
