"""Gaussian-mixture ground truth with exact posteriors and Monte-Carlo oracles.

Random streams
--------------
Every draw comes from a Philox (counter-based) generator keyed by
``SeedSequence(seed, spawn_key=(operation, class))``. ``class`` is 0 for
joint or marginal draws and ``y`` for draws from the class-``y``
conditional. Streams are therefore reproducible across platforms and do
not depend on evaluation order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .core import (
    INCLUDE_ALL,
    LabeledDataset,
    PosteriorModel,
    PredictionSet,
    ThresholdVector,
    membership,
)
from .errors import InvalidArgumentError

# operation ids for stream splitting
OP_SAMPLE = 1
OP_CLASS_THRESHOLD = 2
OP_TOTAL_THRESHOLD = 3
OP_AMBIGUITY = 4
OP_NULL = 5
OP_CURVE = 6
OP_MARGINAL = 7


def stream(seed: int, operation: int, cls: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(operation), int(cls)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class GaussianMixtureSpec:
    """K Gaussian classes with priors, means and covariances."""

    priors: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        pi = np.asarray(self.priors, dtype=float).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        if mu.shape[0] != pi.size and mu.shape[1] == pi.size and mu.shape[0] == 1:
            mu = mu.T  # 1-D means given as a flat list
        K, d = mu.shape
        cov = np.asarray(self.covariances, dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(K, 1, 1)
        cov = cov.reshape(K, d, d)
        if pi.size != K or K < 2:
            raise InvalidArgumentError("need priors and means for at least two classes")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError("priors must be a probability vector")
        chol = np.empty_like(cov)
        for y in range(K):
            if not np.allclose(cov[y], cov[y].T):
                raise InvalidArgumentError(f"covariance of class {y + 1} is not symmetric")
            try:
                chol[y] = np.linalg.cholesky(cov[y])
            except np.linalg.LinAlgError:
                raise InvalidArgumentError(
                    f"covariance of class {y + 1} is not positive definite") from None
        for name, arr in (("priors", pi), ("means", mu), ("covariances", cov), ("_chol", chol)):
            arr = np.array(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def class_count(self) -> int:
        return self.priors.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_class_densities(self, X) -> np.ndarray:
        """``log p_y(x)`` as an ``(n, K)`` matrix."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise InvalidArgumentError(f"expected dimension {self.dim}, got {X.shape[1]}")
        out = np.empty((X.shape[0], self.class_count))
        for y in range(self.class_count):
            L = self._chol[y]
            z = np.linalg.solve(L, (X - self.means[y]).T)
            out[:, y] = (-0.5 * (z * z).sum(axis=0) - np.log(np.diag(L)).sum()
                         - 0.5 * self.dim * math.log(2 * math.pi))
        return out

    def posterior(self, X) -> np.ndarray:
        """Exact ``p(y|x)`` rows, computed in the log domain."""
        with np.errstate(divide="ignore"):
            la = self.log_class_densities(X) + np.log(self.priors)
        return np.exp(la - logsumexp(la, axis=1, keepdims=True))


def example1() -> GaussianMixtureSpec:
    """1-D, two classes: priors (0.95, 0.05), means -1 and 1, unit variance."""
    return GaussianMixtureSpec([0.95, 0.05], [[-1.0], [1.0]], [[[1.0]], [[1.0]]], "EXAMPLE1")


def example3() -> GaussianMixtureSpec:
    """2-D, three equiprobable classes with unequal covariances."""
    return GaussianMixtureSpec(
        np.full(3, 1 / 3),
        [[0.0, 3.5], [-2.0, 0.0], [0.0, 2.0]],
        [np.eye(2), 2 * np.eye(2), np.diag([5.0, 1.0])],
        "EXAMPLE3",
    )


EXAMPLE1 = example1()
EXAMPLE3 = example3()
PRESETS = {"EXAMPLE1": EXAMPLE1, "EXAMPLE3": EXAMPLE3}


def preset(name: str) -> GaussianMixtureSpec:
    try:
        return PRESETS[name.upper()]
    except KeyError:
        raise InvalidArgumentError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


class MixturePosterior(PosteriorModel):
    """Adapter exposing a mixture's exact posterior as a :class:`PosteriorModel`."""

    kind = "oracle"

    def __init__(self, spec: GaussianMixtureSpec):
        self.spec = spec
        self.class_count = spec.class_count

    def predict_proba(self, x) -> np.ndarray:
        X = np.asarray(x, dtype=float)
        if X.ndim <= 1:
            return self.spec.posterior(X.reshape(1, -1))[0]
        return self.spec.posterior(X)


def mixture_posterior(spec: GaussianMixtureSpec, x) -> np.ndarray:
    return MixturePosterior(spec).predict_proba(x)


def sample_class(spec: GaussianMixtureSpec, y: int, n: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((n, spec.dim))
    return spec.means[y - 1] + z @ spec._chol[y - 1].T


def _joint(spec: GaussianMixtureSpec, n: int, seed: int, op: int):
    labels = stream(seed, op, 0).choice(spec.class_count, size=n, p=spec.priors) + 1
    X = np.empty((n, spec.dim))
    for y in range(1, spec.class_count + 1):
        rows = labels == y
        X[rows] = sample_class(spec, y, int(rows.sum()), stream(seed, op, y))
    return X, labels


def sample(spec: GaussianMixtureSpec, n: int, seed: int) -> LabeledDataset:
    """Draw ``n`` labelled points: labels from the priors, features from each class."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    X, labels = _joint(spec, n, seed, OP_SAMPLE)
    return LabeledDataset(X, labels, spec.class_count)


def marginal_scores(spec: GaussianMixtureSpec, n_mc: int, seed: int, op: int = OP_MARGINAL) -> np.ndarray:
    """Posterior matrix at ``n_mc`` draws from the marginal of X."""
    X, _ = _joint(spec, n_mc, seed, op)
    return spec.posterior(X)


def class_scores(spec: GaussianMixtureSpec, y: int, n_mc: int, seed: int,
                 op: int = OP_CLASS_THRESHOLD) -> np.ndarray:
    """``p(y|X)`` for ``n_mc`` draws X from class ``y``."""
    X = sample_class(spec, y, n_mc, stream(seed, op, y))
    return spec.posterior(X)[:, y - 1]


def lower_quantile(scores, alpha: float) -> float:
    """Empirical quantile at rank ``ceil(alpha * n)`` (1-based, at least 1)."""
    s = np.sort(np.asarray(scores, dtype=float))
    r = max(1, math.ceil(alpha * s.size - 1e-9))
    return float(s[min(r, s.size) - 1])


def _check(alpha: float, n_mc: int) -> None:
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    if n_mc < 1000:
        raise InvalidArgumentError("n_mc must be >= 1000")


def oracle_class_threshold(spec: GaussianMixtureSpec, y: int, alpha: float, n_mc: int,
                           seed: int) -> float:
    """Lower alpha-quantile of ``p(y|X)`` with X drawn from class ``y``."""
    _check(alpha, n_mc)
    return lower_quantile(class_scores(spec, y, n_mc, seed), alpha)


def oracle_class_thresholds(spec: GaussianMixtureSpec, alphas, n_mc: int, seed: int) -> ThresholdVector:
    alphas = np.broadcast_to(np.asarray(alphas, dtype=float), (spec.class_count,))
    ts = [oracle_class_threshold(spec, y, a, n_mc, seed) for y, a in enumerate(alphas, start=1)]
    return ThresholdVector.class_specific(ts, method="oracle", alpha=alphas.tolist(),
                                          calibration_sizes=[n_mc] * spec.class_count)


def oracle_total_threshold(spec: GaussianMixtureSpec, alpha: float, n_mc: int, seed: int) -> float:
    """Lower alpha-quantile of ``p(Y|X)`` with (X, Y) drawn jointly."""
    _check(alpha, n_mc)
    X, labels = _joint(spec, n_mc, seed, OP_TOTAL_THRESHOLD)
    P = spec.posterior(X)
    return lower_quantile(P[np.arange(n_mc), labels - 1], alpha)


def oracle_ambiguity(spec: GaussianMixtureSpec, thresholds, n_mc: int, seed: int) -> float:
    """Monte-Carlo ``E|H(X)|`` for the level sets ``p(y|x) >= t_y``."""
    if n_mc < 1000:
        raise InvalidArgumentError("n_mc must be >= 1000")
    P = marginal_scores(spec, n_mc, seed, OP_AMBIGUITY)
    return float(membership(P, thresholds).sum() / n_mc)


def oracle_null_probability(spec: GaussianMixtureSpec, thresholds, n_mc: int, seed: int) -> float:
    """Monte-Carlo probability that the level-set prediction is empty."""
    if n_mc < 1000:
        raise InvalidArgumentError("n_mc must be >= 1000")
    P = marginal_scores(spec, n_mc, seed, OP_NULL)
    return float(np.mean(~membership(P, thresholds).any(axis=1)))


def coverage_curve(spec: GaussianMixtureSpec, total_coverage_grid, n_mc: int, seed: int) -> np.ndarray:
    """Per-class coverage of the total-coverage oracle along a grid.

    Returns an array with columns ``(total_coverage, cov_1, ..., cov_K)``.
    The same draws are reused for every grid point.
    """
    grid = np.asarray(total_coverage_grid, dtype=float).reshape(-1)
    if np.any((grid <= 0) | (grid >= 1)):
        raise InvalidArgumentError("total coverage values must lie in (0, 1)")
    K = spec.class_count
    per_class = [np.sort(class_scores(spec, y, n_mc, seed, OP_CURVE)) for y in range(1, K + 1)]
    out = np.empty((grid.size, K + 1))
    for i, cov in enumerate(grid):
        t = oracle_total_threshold(spec, 1.0 - cov, n_mc, seed)
        out[i, 0] = cov
        for y in range(K):
            s = per_class[y]
            out[i, y + 1] = (s.size - np.searchsorted(s, t, side="left")) / s.size
    return out


@dataclass(frozen=True, eq=False)
class Raster:
    """Prediction sets on a regular grid, stored as bitmasks (bit y-1 for class y)."""

    xs: np.ndarray
    ys: np.ndarray | None
    bitmasks: np.ndarray  # shape (len(ys), len(xs)) in 2-D, (len(xs),) in 1-D

    def set_at(self, *index) -> PredictionSet:
        return PredictionSet.from_bitmask(int(self.bitmasks[index]))

    @property
    def empty_fraction(self) -> float:
        return float(np.mean(self.bitmasks == 0))

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            if self.ys is None:
                w.writerow(["x", "set_bitmask"])
                for x, b in zip(self.xs, self.bitmasks):
                    w.writerow([repr(float(x)), int(b)])
                return
            w.writerow(["x", "y", "set_bitmask"])
            for j, yv in enumerate(self.ys):
                for i, xv in enumerate(self.xs):
                    w.writerow([repr(float(xv)), repr(float(yv)), int(self.bitmasks[j, i])])


def region_raster(spec_or_model, thresholds: ThresholdVector, box, resolution) -> Raster:
    """Evaluate level-set predictions on a regular grid.

    ``box`` is ``(xmin, xmax)`` in 1-D or ``(xmin, xmax, ymin, ymax)`` in 2-D;
    ``resolution`` is the number of grid points per axis (int or pair).
    """
    model = MixturePosterior(spec_or_model) if isinstance(spec_or_model, GaussianMixtureSpec) else spec_or_model
    box = tuple(float(b) for b in box)
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (len(box) // 2,))
    if np.any(res < 1) or any(box[2 * i + 1] <= box[2 * i] for i in range(len(box) // 2)):
        raise InvalidArgumentError("box must have positive extent and resolution must be >= 1")
    weights = 1 << np.arange(model.class_count)
    xs = np.linspace(box[0], box[1], int(res[0]))
    if len(box) == 2:
        M = membership(np.atleast_2d(model.predict_proba(xs[:, None])), thresholds)
        return Raster(xs, None, (M * weights).sum(axis=1))
    if len(box) != 4:
        raise InvalidArgumentError("box must have 2 or 4 entries")
    ys = np.linspace(box[2], box[3], int(res[1]))
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    M = membership(np.atleast_2d(model.predict_proba(pts)), thresholds)
    return Raster(xs, ys, (M * weights).sum(axis=1).reshape(gy.shape))


def write_curve_csv(path, curve: np.ndarray) -> None:
    K = curve.shape[1] - 1
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["total_coverage", *(f"cov_{y}" for y in range(1, K + 1))])
        for row in curve:
            w.writerow([repr(float(v)) for v in row])


__all__ = [
    "EXAMPLE1",
    "EXAMPLE3",
    "INCLUDE_ALL",
    "GaussianMixtureSpec",
    "MixturePosterior",
    "Raster",
    "class_scores",
    "coverage_curve",
    "example1",
    "example3",
    "lower_quantile",
    "marginal_scores",
    "mixture_posterior",
    "oracle_ambiguity",
    "oracle_class_threshold",
    "oracle_class_thresholds",
    "oracle_null_probability",
    "oracle_total_threshold",
    "preset",
    "region_raster",
    "sample",
    "stream",
    "write_curve_csv",
]
