"""Domain types, dataset splitting and the level-set prediction rule.

Labels are 1-based everywhere in the public API: class ``y`` corresponds to
column ``y - 1`` of every posterior matrix.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataError, InvalidArgumentError

#: Threshold entry that accepts every score (an effectively -inf cut-off).
INCLUDE_ALL = float("-inf")

TOTAL = "total"
CLASS = "class"
_MODES = (TOTAL, CLASS)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix with integer labels in ``1..class_count``."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    class_names: tuple[str, ...] | None = None
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise InvalidArgumentError("features must be a 2-D array")
        y = np.asarray(self.labels)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise InvalidArgumentError(
                f"labels must be a vector of length {X.shape[0]}, got shape {y.shape}"
            )
        if X.shape[0] < 1:
            raise InvalidArgumentError("dataset must contain at least one row")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise DataError("labels must be integers")
        y = y.astype(np.int64)
        K = int(self.class_count)
        if K < 2:
            raise InvalidArgumentError(f"class_count must be >= 2, got {K}")
        if y.min() < 1 or y.max() > K:
            raise DataError(f"labels must lie in 1..{K}")
        if self.class_names is not None and len(self.class_names) != K:
            raise InvalidArgumentError("class_names must have class_count entries")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "class_count", K)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels - 1, minlength=self.class_count)

    def class_frequencies(self) -> np.ndarray:
        """Empirical class proportions, indexed by ``y - 1``."""
        return self.class_counts() / self.n

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.features[idx],
            self.labels[idx],
            self.class_count,
            self.class_names,
            self.feature_names,
        )

    def fingerprint(self) -> str:
        """SHA-256 of the features, labels and class count."""
        h = hashlib.sha256()
        h.update(f"K={self.class_count};n={self.n};d={self.d};".encode())
        h.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()


class PosteriorModel:
    """Anything that maps feature vectors to a probability simplex over K classes.

    Subclasses implement :meth:`predict_proba` for a batch ``(n, d)`` and set
    ``class_count``. A 1-D input is treated as a single query and a 1-D
    vector is returned.
    """

    kind = "abstract"
    class_count: int
    fingerprint: str | None = None

    def predict_proba(self, X) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


class CallablePosterior(PosteriorModel):
    """Wrap a function ``f(X) -> (n, K)`` as a :class:`PosteriorModel`."""

    kind = "callable"

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], class_count: int,
                 fingerprint: str | None = None):
        self._fn = fn
        self.class_count = int(class_count)
        self.fingerprint = fingerprint

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        P = np.asarray(self._fn(X.reshape(1, -1) if single else X), dtype=np.float64)
        return P[0] if single else P


@dataclass(frozen=True, eq=False)
class ThresholdVector:
    """Per-class cut-offs, or a single cut-off shared by all classes.

    Entries are finite reals in [0, 1] or :data:`INCLUDE_ALL`. ``metadata``
    carries calibration provenance (method, levels, calibration sizes).
    """

    mode: str
    values: tuple[float, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in _MODES:
            raise InvalidArgumentError(f"mode must be one of {_MODES}, got {self.mode!r}")
        vals = tuple(float(v) for v in np.atleast_1d(np.asarray(self.values, dtype=float)))
        if self.mode == TOTAL and len(vals) != 1:
            raise InvalidArgumentError("total mode stores exactly one threshold")
        if self.mode == CLASS and len(vals) < 1:
            raise InvalidArgumentError("class-specific mode needs at least one threshold")
        for v in vals:
            if v == INCLUDE_ALL:
                continue
            if not math.isfinite(v) or v < 0.0 or v > 1.0:
                raise InvalidArgumentError(f"threshold {v} outside [0, 1]")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @classmethod
    def total(cls, t: float, **metadata) -> "ThresholdVector":
        return cls(TOTAL, (t,), metadata)

    @classmethod
    def class_specific(cls, ts: Iterable[float], **metadata) -> "ThresholdVector":
        return cls(CLASS, tuple(ts), metadata)

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self, class_count: int | None = None) -> np.ndarray:
        """Expand to one entry per class (``-inf`` for :data:`INCLUDE_ALL`)."""
        if self.mode == TOTAL:
            if class_count is None:
                raise InvalidArgumentError("class_count is required to expand a total threshold")
            return np.full(int(class_count), self.values[0])
        if class_count is not None and class_count != len(self.values):
            raise InvalidArgumentError(
                f"threshold vector has {len(self.values)} entries, model has {class_count} classes"
            )
        return np.array(self.values)

    def finite_sum(self) -> float:
        """Sum of entries with :data:`INCLUDE_ALL` counted as 0."""
        return float(sum(v for v in self.values if v != INCLUDE_ALL))

    def replace(self, values: Iterable[float], **metadata) -> "ThresholdVector":
        md = dict(self.metadata)
        md.update(metadata)
        return ThresholdVector(self.mode, tuple(values), md)


@dataclass(frozen=True, order=True)
class PredictionSet:
    """A sorted subset of ``{1..K}``; may be empty."""

    members: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(sorted({int(m) for m in self.members})))
        if any(m < 1 for m in self.members):
            raise InvalidArgumentError("set members are 1-based class labels")

    @classmethod
    def from_mask(cls, row) -> "PredictionSet":
        return cls(tuple(int(j) + 1 for j in np.flatnonzero(row)))

    @classmethod
    def from_bitmask(cls, bits: int) -> "PredictionSet":
        return cls(tuple(j + 1 for j in range(int(bits).bit_length()) if bits >> j & 1))

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, y) -> bool:
        return int(y) in self.members

    def __iter__(self):
        return iter(self.members)

    @property
    def is_empty(self) -> bool:
        return not self.members

    @property
    def bitmask(self) -> int:
        return sum(1 << (m - 1) for m in self.members)

    def __str__(self) -> str:
        return "{" + ",".join(map(str, self.members)) + "}"


@dataclass(frozen=True)
class CoverageSpec:
    """Target error level(s): one ``alpha`` (total) or one per class."""

    mode: str
    levels: tuple[float, ...]

    def __post_init__(self):
        if self.mode not in _MODES:
            raise InvalidArgumentError(f"mode must be one of {_MODES}, got {self.mode!r}")
        levels = tuple(float(a) for a in np.atleast_1d(self.levels))
        if self.mode == TOTAL and len(levels) != 1:
            raise InvalidArgumentError("total coverage takes a single alpha")
        for a in levels:
            if not 0.0 < a < 1.0:
                raise InvalidArgumentError(f"error level {a} must lie strictly in (0, 1)")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def total(cls, alpha: float) -> "CoverageSpec":
        return cls(TOTAL, (alpha,))

    @classmethod
    def class_specific(cls, alphas) -> "CoverageSpec":
        return cls(CLASS, tuple(np.atleast_1d(alphas)))

    def class_levels(self, class_count: int) -> np.ndarray:
        """Per-class alphas; a single class-mode level is broadcast to all classes."""
        if len(self.levels) == 1:
            return np.full(class_count, self.levels[0])
        if len(self.levels) != class_count:
            raise InvalidArgumentError(
                f"got {len(self.levels)} error levels for {class_count} classes"
            )
        return np.array(self.levels)


@dataclass(frozen=True, eq=False)
class SplitPlan:
    """Disjoint fit (I1) / calibration (I2) index sets, 0-based row indices."""

    seed: int
    fraction: float
    fit_indices: np.ndarray
    calibration_indices: np.ndarray
    calibration_by_class: tuple[np.ndarray, ...]
    data_fingerprint: str = ""

    @property
    def missing_classes(self) -> tuple[int, ...]:
        """Classes (1-based) with no calibration rows."""
        return tuple(y + 1 for y, idx in enumerate(self.calibration_by_class) if idx.size == 0)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "fraction": self.fraction,
            "fit_indices": self.fit_indices.tolist(),
            "calibration_indices": self.calibration_indices.tolist(),
            "data_fingerprint": self.data_fingerprint,
        }


def split(dataset: LabeledDataset, seed: int, fraction: float) -> SplitPlan:
    """Randomly partition rows into a fitting part and a calibration part.

    ``round(fraction * n)`` rows go to the fitting part. The permutation is
    drawn from a Philox generator keyed by ``seed``.
    """
    if not 0.0 < fraction < 1.0:
        raise InvalidArgumentError(f"fraction must lie in (0, 1), got {fraction}")
    n = dataset.n
    if n < 2:
        raise InvalidArgumentError("splitting needs at least two rows")
    n_fit = int(round(fraction * n))
    n_fit = min(max(n_fit, 1), n - 1)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(0x5917,))))
    perm = rng.permutation(n)
    fit = np.sort(perm[:n_fit])
    cal = np.sort(perm[n_fit:])
    by_class = tuple(_frozen(cal[dataset.labels[cal] == y]) for y in range(1, dataset.class_count + 1))
    return SplitPlan(int(seed), float(fraction), _frozen(fit), _frozen(cal), by_class,
                     dataset.fingerprint())


def membership(probs, thresholds) -> np.ndarray:
    """Boolean ``(n, K)`` matrix of ``p(y|x) >= t_y``."""
    P = np.asarray(probs, dtype=np.float64)
    if isinstance(thresholds, ThresholdVector):
        t = thresholds.as_array(P.shape[-1])
    else:
        # raw cut-offs are unvalidated; values above 1 exclude the class
        t = np.broadcast_to(np.asarray(thresholds, dtype=np.float64), (P.shape[-1],))
    if t.shape[0] != P.shape[-1]:
        raise InvalidArgumentError(
            f"model emits {P.shape[-1]} probabilities, thresholds have {t.shape[0]} entries"
        )
    return P >= t


def predict_set(model: PosteriorModel, thresholds: ThresholdVector, x) -> PredictionSet:
    """Level-set prediction ``{y : p(y|x) >= t_y}`` for one query."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    p = np.asarray(model.predict_proba(x), dtype=np.float64).reshape(-1)
    return PredictionSet.from_mask(membership(p, thresholds))


def predict_sets(model: PosteriorModel, thresholds: ThresholdVector, X) -> list[PredictionSet]:
    P = np.atleast_2d(model.predict_proba(np.atleast_2d(np.asarray(X, dtype=np.float64))))
    return [PredictionSet.from_mask(row) for row in membership(P, thresholds)]


def is_admissible_sufficient(thresholds: ThresholdVector) -> bool:
    """True when the thresholds sum to at most 1, which rules out empty sets."""
    if thresholds.mode != CLASS:
        raise InvalidArgumentError("admissibility check expects class-specific thresholds")
    return thresholds.finite_sum() <= 1.0


def read_csv(path, label_col: str, class_names: Sequence[str] | None = None,
             class_count: int | None = None) -> LabeledDataset:
    """Load a headered CSV with one label column and numeric feature columns.

    Integer labels are used as given (1-based). Any other label values are
    mapped to ``1..K`` in sorted order, or through ``class_names`` when given.
    Rows with non-numeric features raise :class:`DataError` listing line numbers.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if label_col not in header:
            raise DataError(f"{path}: label column {label_col!r} not found in header {header}")
        li = header.index(label_col)
        feature_names = tuple(h for j, h in enumerate(header) if j != li)
        rows, raw_labels, bad = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                bad.append(lineno)
                continue
            try:
                rows.append([float(c) for j, c in enumerate(rec) if j != li])
            except ValueError:
                bad.append(lineno)
                continue
            raw_labels.append(rec[li].strip())
    if bad:
        shown = ", ".join(map(str, bad[:20])) + (" ..." if len(bad) > 20 else "")
        noun = "line" if len(bad) == 1 else "lines"
        raise DataError(f"{path}: non-numeric or malformed rows at {noun} {shown}")
    if not rows:
        raise DataError(f"{path}: no data rows")
    X = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path}: features contain non-finite values")
    labels, names = _encode_labels(raw_labels, class_names, path)
    K = class_count or (len(names) if names is not None else int(labels.max()))
    if names is None and K < 2:
        K = 2
    return LabeledDataset(X, labels, K, names, feature_names)


def _encode_labels(raw: list[str], class_names, path):
    if class_names is not None:
        lookup = {str(c): i + 1 for i, c in enumerate(class_names)}
        try:
            return np.array([lookup[r] for r in raw]), tuple(map(str, class_names))
        except KeyError as exc:
            # integer labels are allowed even when names are known
            if all(r.lstrip("-").isdigit() for r in raw):
                return np.array([int(r) for r in raw]), tuple(map(str, class_names))
            raise DataError(f"{path}: unknown label {exc.args[0]!r}") from None
    if all(r.lstrip("-").isdigit() for r in raw):
        labels = np.array([int(r) for r in raw])
        if labels.min() < 1:
            raise DataError(f"{path}: integer labels must be >= 1")
        return labels, None
    names = tuple(sorted(set(raw)))
    lookup = {c: i + 1 for i, c in enumerate(names)}
    return np.array([lookup[r] for r in raw]), names


def write_csv(path, dataset: LabeledDataset, label_col: str = "label") -> None:
    names = dataset.feature_names or tuple(f"x{j + 1}" for j in range(dataset.d))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*names, label_col])
        for row, y in zip(dataset.features, dataset.labels):
            w.writerow([*(repr(float(v)) for v in row), int(y)])
