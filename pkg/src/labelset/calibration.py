"""Coverage thresholds: plug-in empirical quantiles and split-conformal ranks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    CLASS,
    INCLUDE_ALL,
    TOTAL,
    CoverageSpec,
    LabeledDataset,
    PosteriorModel,
    SplitPlan,
    ThresholdVector,
)
from .errors import DataError, InvalidArgumentError, LeakageError

PLUGIN = "plugin"
CONFORMAL = "conformal"

# slack on count comparisons so that e.g. (1 - 0.1) * 10 is treated as 9
_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class ScoreSample:
    """Posterior scores with the row indices they came from.

    ``sorted_scores`` orders by (score, source index).
    """

    scores: np.ndarray
    indices: np.ndarray | None = None
    owner: int | None = None

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(s)):
            raise InvalidArgumentError("scores must be finite")
        idx = np.arange(s.size) if self.indices is None else np.array(self.indices, dtype=np.int64)
        if idx.shape != s.shape:
            raise InvalidArgumentError("indices must match scores")
        s.setflags(write=False)
        idx.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.scores.size

    @property
    def order(self) -> np.ndarray:
        return np.lexsort((self.indices, self.scores))

    @property
    def sorted_scores(self) -> np.ndarray:
        return self.scores[self.order]


def _sample(scores) -> ScoreSample:
    return scores if isinstance(scores, ScoreSample) else ScoreSample(scores)


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def plugin_threshold(scores, alpha: float) -> float:
    """Largest sample score ``s`` whose empirical coverage ``#{scores >= s}/n`` is >= 1 - alpha."""
    sample = _sample(scores)
    alpha = _check_alpha(alpha)
    n = len(sample)
    if n == 0:
        raise InvalidArgumentError("plug-in threshold needs at least one score")
    need = max(1, math.ceil((1.0 - alpha) * n - _EPS))
    return float(sample.sorted_scores[n - need])


def plugin_total_threshold(scores, alpha: float) -> ThresholdVector:
    sample = _sample(scores)
    t = plugin_threshold(sample, alpha)
    return ThresholdVector.total(t, method=PLUGIN, alpha=[float(alpha)],
                                 calibration_sizes=[len(sample)])


def plugin_class_thresholds(class_scores, alphas) -> ThresholdVector:
    """One plug-in threshold per class.

    ``class_scores[y-1]`` holds ``p(y|X_i)`` over rows with label ``y``.
    """
    alphas = np.broadcast_to(np.asarray(alphas, dtype=float), (len(class_scores),))
    ts = []
    for y, (sc, a) in enumerate(zip(class_scores, alphas), start=1):
        sample = _sample(sc)
        if len(sample) == 0:
            raise DataError(f"class {y} has no calibration points")
        ts.append(plugin_threshold(sample, a))
    return ThresholdVector.class_specific(ts, method=PLUGIN, alpha=alphas.tolist(),
                                          calibration_sizes=[len(_sample(s)) for s in class_scores])


def conformal_p_value(candidate_score: float, calibration) -> float:
    """``(#{calibration scores <= candidate} + 1) / (m + 1)``."""
    sample = _sample(calibration)
    m = len(sample)
    if m == 0:
        raise InvalidArgumentError("calibration sample is empty")
    count = int(np.count_nonzero(sample.scores <= candidate_score))
    return (count + 1) / (m + 1)


def conformal_rank(m: int, alpha: float) -> int:
    """``floor(alpha * (m + 1))``; 0 means no finite cut-off is certified."""
    return int(math.floor(_check_alpha(alpha) * (m + 1) + 1e-12))


def conformal_threshold(calibration, alpha: float) -> float:
    """Split-conformal cut-off for one calibration sample.

    Returns the ``kappa``-th smallest score with ``kappa = floor(alpha (m+1))``,
    or :data:`INCLUDE_ALL` when ``kappa == 0``. Excluding scores below the
    returned value keeps the exclusion probability of a fresh exchangeable
    score at most ``kappa / (m + 1) <= alpha``.
    """
    sample = _sample(calibration)
    m = len(sample)
    if m == 0:
        raise InvalidArgumentError("calibration sample is empty")
    kappa = conformal_rank(m, alpha)
    if kappa == 0:
        return INCLUDE_ALL
    return float(sample.sorted_scores[kappa - 1])


def conformal_total_threshold(calibration, alpha: float) -> ThresholdVector:
    sample = _sample(calibration)
    t = conformal_threshold(sample, alpha)
    md = dict(method=CONFORMAL, alpha=[float(alpha)], calibration_sizes=[len(sample)])
    if t == INCLUDE_ALL:
        md["include_all"] = [1]
    return ThresholdVector.total(t, **md)


def conformal_class_thresholds(class_scores, alphas) -> ThresholdVector:
    alphas = np.broadcast_to(np.asarray(alphas, dtype=float), (len(class_scores),))
    ts, sizes = [], []
    for y, (sc, a) in enumerate(zip(class_scores, alphas), start=1):
        sample = _sample(sc)
        if len(sample) == 0:
            raise DataError(f"class {y} has no calibration points")
        ts.append(conformal_threshold(sample, a))
        sizes.append(len(sample))
    md = dict(method=CONFORMAL, alpha=alphas.tolist(), calibration_sizes=sizes)
    sentinel = [y for y, t in enumerate(ts, start=1) if t == INCLUDE_ALL]
    if sentinel:
        # the rank rule certifies no finite cut for these classes
        md["include_all"] = sentinel
    return ThresholdVector.class_specific(ts, **md)


def true_label_scores(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """``p(Y_i | X_i)`` for each row."""
    return probs[np.arange(labels.size), labels - 1]


def calibration_rows(data: LabeledDataset, plan: SplitPlan | None, method: str) -> np.ndarray:
    if plan is None:
        if method == CONFORMAL:
            raise InvalidArgumentError("split-conformal calibration requires a split plan")
        return np.arange(data.n)
    return np.asarray(plan.calibration_indices)


def check_no_leakage(model: PosteriorModel, data: LabeledDataset, plan: SplitPlan) -> None:
    """Require the model to have been fitted on exactly the plan's fitting rows."""
    if plan.data_fingerprint and plan.data_fingerprint != data.fingerprint():
        raise LeakageError("split plan was built for a different dataset")
    expected = data.subset(plan.fit_indices).fingerprint()
    if getattr(model, "fingerprint", None) != expected:
        raise LeakageError(
            "model training-data fingerprint does not match the split's fitting rows; "
            "calibration rows may have been used for fitting"
        )


def calibrate(model: PosteriorModel, data: LabeledDataset, plan: SplitPlan | None,
              spec: CoverageSpec, method: str = CONFORMAL) -> ThresholdVector:
    """Score the calibration rows with ``model`` and apply the threshold rule.

    Plug-in without a plan uses all rows; otherwise the plan's calibration
    rows are used. Split-conformal calibration checks that the model was
    fitted on the plan's fitting rows only.
    """
    if method not in (PLUGIN, CONFORMAL):
        raise InvalidArgumentError(f"unknown calibration method {method!r}")
    if method == CONFORMAL:
        if plan is None:
            raise InvalidArgumentError("split-conformal calibration requires a split plan")
        check_no_leakage(model, data, plan)
    rows = calibration_rows(data, plan, method)
    if rows.size == 0:
        raise DataError("no calibration rows")
    K = data.class_count
    if model.class_count != K:
        raise InvalidArgumentError(f"model has {model.class_count} classes, data has {K}")
    P = np.atleast_2d(model.predict_proba(data.features[rows]))
    labels = data.labels[rows]
    if spec.mode == TOTAL:
        sample = ScoreSample(true_label_scores(P, labels), rows)
        if method == PLUGIN:
            return plugin_total_threshold(sample, spec.levels[0])
        return conformal_total_threshold(sample, spec.levels[0])
    alphas = spec.class_levels(K)
    per_class = []
    for y in range(1, K + 1):
        mask = labels == y
        if not mask.any():
            raise DataError(f"class {y} has no calibration rows")
        per_class.append(ScoreSample(P[mask, y - 1], rows[mask], owner=y))
    if method == PLUGIN:
        return plugin_class_thresholds(per_class, alphas)
    return conformal_class_thresholds(per_class, alphas)


def ambiguity_rows(data: LabeledDataset, plan: SplitPlan | None, method: str) -> np.ndarray:
    """Rows on which empirical ambiguity is measured for completion."""
    return calibration_rows(data, plan, method)
