"""Plug-in estimators of the class posterior p(y|x).

Three families are provided:

* k nearest neighbours, counting exactly ``k`` neighbours under the
  deterministic (distance, row index) order;
* Gaussian-kernel estimators, either Nadaraya-Watson regression of the
  class indicators or per-class density estimates weighted by class priors;
* ridge-penalised multinomial (softmax) logistic regression fitted by
  full-batch gradient descent with Armijo backtracking.

Batch evaluation is chunked; chunks may run on a thread pool capped by the
``LABELSET_THREADS`` environment variable. Results do not depend on the
number of workers.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import LabeledDataset, PosteriorModel
from .errors import DataError, InvalidArgumentError

log = logging.getLogger(__name__)

_CHUNK = 512
_CELL_BUDGET = 2_000_000  # max query*train*dim cells held per chunk


def thread_count() -> int:
    raw = os.environ.get("LABELSET_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 1
    return max(n, 1)


def _chunk_for(n_train: int, d: int) -> int:
    return int(min(_CHUNK, max(1, _CELL_BUDGET // max(n_train * d, 1))))


def _batched(fn, X: np.ndarray, chunk: int = _CHUNK) -> np.ndarray:
    starts = range(0, X.shape[0], chunk)
    workers = thread_count()
    if workers == 1 or X.shape[0] <= chunk:
        parts = [fn(X[s:s + chunk]) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: fn(X[s:s + chunk]), starts))
    return np.concatenate(parts, axis=0)


def _as_queries(x, d: int) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim <= 1
    X = X.reshape(1, -1) if single else X
    if X.ndim != 2 or X.shape[1] != d:
        raise InvalidArgumentError(f"expected queries of dimension {d}, got shape {np.shape(x)}")
    return X, single


# ---------------------------------------------------------------------------
# k nearest neighbours
# ---------------------------------------------------------------------------


class KnnModel(PosteriorModel):
    """k-NN class-frequency estimate with Euclidean distance."""

    kind = "knn"

    def __init__(self, data: LabeledDataset, k: int):
        self.data = data
        self.k = int(k)
        self.class_count = data.class_count
        self.fingerprint = data.fingerprint()

    @property
    def params(self) -> dict:
        return {"k": self.k}

    def neighbors(self, X) -> np.ndarray:
        """Row indices of the ``k`` nearest training points, nearest first."""
        X, _ = _as_queries(X, self.data.d)
        return _batched(self._neighbors_chunk, X, _chunk_for(self.data.n, self.data.d))

    def _neighbors_chunk(self, Q: np.ndarray) -> np.ndarray:
        T = self.data.features
        d2 = ((Q[:, None, :] - T[None, :, :]) ** 2).sum(axis=-1)
        # stable sort keeps lower row index first among equal distances
        return np.argsort(d2, axis=1, kind="stable")[:, : self.k]

    def predict_proba(self, x) -> np.ndarray:
        X, single = _as_queries(x, self.data.d)
        nb = self.neighbors(X)
        onehot = np.eye(self.class_count)[self.data.labels - 1]
        P = onehot[nb].sum(axis=1) / self.k
        return P[0] if single else P


def fit_knn(data: LabeledDataset, k: int) -> KnnModel:
    if not 1 <= int(k) <= data.n:
        raise InvalidArgumentError(f"k must lie in 1..{data.n}, got {k}")
    return KnnModel(data, k)


def knn_posterior(model: KnnModel, x) -> np.ndarray:
    return model.predict_proba(x)


# ---------------------------------------------------------------------------
# Gaussian kernel
# ---------------------------------------------------------------------------

REGRESSION = "regression"
CLASS_CONDITIONAL = "class-conditional"


def silverman_bandwidth(X) -> np.ndarray:
    """Gaussian-reference bandwidth per dimension.

    ``h_j = s_j * (4 / (d + 2)) ** (1 / (d + 4)) * n ** (-1 / (d + 4))``
    where ``s_j`` is the sample standard deviation (ddof=1) of column ``j``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    if n < 2:
        raise InvalidArgumentError("Silverman's rule needs at least two rows")
    sd = X.std(axis=0, ddof=1)
    zero = np.flatnonzero(sd <= 0)
    if zero.size:
        raise DataError(f"zero variance in dimension {int(zero[0]) + 1}; cannot choose bandwidth")
    return sd * (4.0 / (d + 2)) ** (1.0 / (d + 4)) * n ** (-1.0 / (d + 4))


class KernelModel(PosteriorModel):
    """Product-Gaussian kernel posterior.

    In ``regression`` mode the estimate is the Nadaraya-Watson average of
    class indicators. In ``class-conditional`` mode each class gets its own
    density estimate (bandwidth ``bandwidths[y-1]``) and the posterior is
    ``prior_y * f_y(x)`` normalised over classes. With every class using the
    pooled bandwidth the two modes coincide.
    """

    kind = "kernel"

    def __init__(self, data: LabeledDataset, bandwidths: np.ndarray, mode: str,
                 bandwidth_rule: str):
        self.data = data
        self.mode = mode
        self.bandwidth_rule = bandwidth_rule
        bw = np.array(bandwidths, dtype=np.float64)
        bw.setflags(write=False)
        # (d,) for regression, (K, d) for class-conditional
        self.bandwidths = bw
        self.priors = data.class_frequencies()
        self.class_count = data.class_count
        self.fingerprint = data.fingerprint()

    @property
    def params(self) -> dict:
        return {"mode": self.mode, "bandwidth_rule": self.bandwidth_rule}

    def _log_kernel(self, Q: np.ndarray, T: np.ndarray, h: np.ndarray) -> np.ndarray:
        z = (Q[:, None, :] - T[None, :, :]) / h
        return -0.5 * (z * z).sum(axis=-1) - np.log(h).sum() - 0.5 * h.size * np.log(2 * np.pi)

    def _weights_chunk(self, Q: np.ndarray) -> np.ndarray:
        # returns unnormalised class masses; zero rows flag far queries
        T, lab, K = self.data.features, self.data.labels - 1, self.class_count
        out = np.zeros((Q.shape[0], K))
        if self.mode == REGRESSION:
            w = np.exp(self._log_kernel(Q, T, self.bandwidths))
            for y in range(K):
                out[:, y] = w[:, lab == y].sum(axis=1)
            return out
        for y in range(K):
            rows = lab == y
            if not rows.any():
                continue
            w = np.exp(self._log_kernel(Q, T[rows], self.bandwidths[y]))
            out[:, y] = self.priors[y] * w.mean(axis=1)
        return out

    def predict_proba(self, x, return_far: bool = False):
        """Posterior rows; with ``return_far`` also a boolean far-query mask.

        A query whose kernel weights all underflow to zero gets the class
        prior vector and is flagged.
        """
        X, single = _as_queries(x, self.data.d)
        W = _batched(self._weights_chunk, X, _chunk_for(self.data.n, self.data.d))
        mass = W.sum(axis=1)
        far = mass <= 0.0
        P = np.empty_like(W)
        P[~far] = W[~far] / mass[~far, None]
        P[far] = self.priors
        if far.any():
            log.debug("%d far queries fell back to the class prior", int(far.sum()))
        if single:
            P, far = P[0], far[0]
        return (P, far) if return_far else P


def fit_kernel(data: LabeledDataset, bandwidth="auto", mode: str = CLASS_CONDITIONAL,
               pooled: bool = False) -> KernelModel:
    """Fit a Gaussian kernel posterior.

    Parameters
    ----------
    data : LabeledDataset
    bandwidth : "auto" or array-like
        ``"auto"`` applies :func:`silverman_bandwidth`. Explicit values are a
        scalar or one per dimension and are stored verbatim.
    mode : {"regression", "class-conditional"}
    pooled : bool
        Class-conditional mode only: use one bandwidth computed from all rows
        instead of a per-class bandwidth from each class's rows.
    """
    if mode not in (REGRESSION, CLASS_CONDITIONAL):
        raise InvalidArgumentError(f"unknown kernel mode {mode!r}")
    d, K = data.d, data.class_count
    if isinstance(bandwidth, str):
        if bandwidth != "auto":
            raise InvalidArgumentError(f"bandwidth must be 'auto' or numeric, got {bandwidth!r}")
        rule = "silverman"
        if data.n < 2:
            raise InvalidArgumentError("automatic bandwidth needs n >= 2")
        if mode == REGRESSION or pooled:
            h = silverman_bandwidth(data.features)
            bw = h if mode == REGRESSION else np.tile(h, (K, 1))
        else:
            bw = np.empty((K, d))
            for y in range(1, K + 1):
                rows = data.features[data.labels == y]
                if rows.shape[0] == 0:
                    bw[y - 1] = 1.0  # unused: class has no kernel mass
                    continue
                if rows.shape[0] < 2:
                    raise DataError(f"class {y} has fewer than two rows; cannot choose bandwidth")
                try:
                    bw[y - 1] = silverman_bandwidth(rows)
                except DataError as exc:
                    raise DataError(f"class {y}: {exc}") from None
    else:
        rule = "explicit"
        h = np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (d,)).copy()
        if not np.all(np.isfinite(h)) or np.any(h <= 0):
            raise InvalidArgumentError("bandwidths must be positive")
        bw = h if mode == REGRESSION else np.tile(h, (K, 1))
    return KernelModel(data, bw, mode, rule)


def kernel_posterior(model: KernelModel, x, return_far: bool = False):
    return model.predict_proba(x, return_far=return_far)


# ---------------------------------------------------------------------------
# Multinomial logistic regression
# ---------------------------------------------------------------------------


def softmax_posterior(theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``softmax(theta @ [1; x])`` row-wise, max-subtracted."""
    Z = X @ theta[:, 1:].T + theta[:, 0]
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _objective_parts(theta, X, rows, cols, lam):
    Z = X @ theta[:, 1:].T + theta[:, 0]
    zmax = Z.max(axis=1, keepdims=True)
    E = np.exp(Z - zmax)
    S = E.sum(axis=1)
    nll = np.log(S) + zmax[:, 0] - Z[rows, cols]
    f = float(nll.mean() + 0.5 * lam * np.sum(theta[:, 1:] ** 2))
    return f, E / S[:, None]


def logistic_objective(theta: np.ndarray, X: np.ndarray, labels: np.ndarray, lam: float) -> float:
    """Mean negative log-likelihood plus ``lam/2 * ||weights||^2`` (intercepts free)."""
    return _objective_parts(theta, X, np.arange(X.shape[0]), labels - 1, lam)[0]


def _gradient_from(R: np.ndarray, theta, X, rows, cols, lam) -> np.ndarray:
    R = R.copy()
    R[rows, cols] -= 1.0
    R /= X.shape[0]
    g = np.empty_like(theta)
    g[:, 0] = R.sum(axis=0)
    g[:, 1:] = R.T @ X + lam * theta[:, 1:]
    return g


def logistic_gradient(theta: np.ndarray, X: np.ndarray, labels: np.ndarray, lam: float) -> np.ndarray:
    rows, cols = np.arange(X.shape[0]), labels - 1
    return _gradient_from(softmax_posterior(theta, X), theta, X, rows, cols, lam)


@dataclass(frozen=True)
class FitDiagnostics:
    iterations: int
    gradient_norm: float
    objective: float
    converged: bool
    warnings: tuple[str, ...] = field(default_factory=tuple)


class LogisticModel(PosteriorModel):
    """Softmax regression with coefficient matrix ``theta`` of shape (K, d+1).

    Column 0 holds the intercepts.
    """

    kind = "logistic"

    def __init__(self, theta: np.ndarray, ridge: float, diagnostics: FitDiagnostics | None,
                 fingerprint: str | None = None):
        theta = np.array(theta, dtype=np.float64)
        if theta.ndim != 2 or not np.all(np.isfinite(theta)):
            raise InvalidArgumentError("theta must be a finite 2-D matrix")
        theta.setflags(write=False)
        self.theta = theta
        self.ridge = float(ridge)
        self.diagnostics = diagnostics
        self.class_count = theta.shape[0]
        self.fingerprint = fingerprint

    @property
    def params(self) -> dict:
        return {"lambda": self.ridge}

    def predict_proba(self, x) -> np.ndarray:
        X, single = _as_queries(x, self.theta.shape[1] - 1)
        P = softmax_posterior(self.theta, X)
        return P[0] if single else P


def fit_logistic(data: LabeledDataset, ridge: float = 0.0, max_iter: int = 5000,
                 tol: float = 1e-6) -> LogisticModel:
    """Gradient descent on the penalised softmax negative log-likelihood.

    Each iteration starts a backtracking search at step 1.0 and halves until
    the Armijo condition with ``c = 1e-4`` holds. Stops once the gradient
    infinity-norm drops below ``tol`` or after ``max_iter`` iterations; the
    latter is recorded in the diagnostics rather than raised.
    """
    if ridge < 0 or not np.isfinite(ridge):
        raise InvalidArgumentError(f"ridge penalty must be >= 0, got {ridge}")
    if data.n < data.class_count:
        raise InvalidArgumentError(f"need n >= K ({data.n} < {data.class_count})")
    X, lam = data.features, float(ridge)
    rows, cols = np.arange(data.n), data.labels - 1
    theta = np.zeros((data.class_count, data.d + 1))
    f, R = _objective_parts(theta, X, rows, cols, lam)
    g = _gradient_from(R, theta, X, rows, cols, lam)
    gnorm = float(np.abs(g).max())
    it = 0
    while it < max_iter and gnorm >= tol:
        step, gg = 1.0, float(np.sum(g * g))
        while True:
            cand = theta - step * g
            fc, Rc = _objective_parts(cand, X, rows, cols, lam)
            if fc <= f - 1e-4 * step * gg or step < 1e-20:
                break
            step *= 0.5
        theta, f = cand, fc
        g = _gradient_from(Rc, theta, X, rows, cols, lam)
        gnorm = float(np.abs(g).max())
        it += 1
    converged = gnorm < tol
    warns = () if converged else (f"no convergence after {it} iterations (|grad|={gnorm:.3g})",)
    if warns:
        log.warning(warns[0])
    diag = FitDiagnostics(it, gnorm, f, converged, warns)
    return LogisticModel(theta, lam, diag, data.fingerprint())


def logistic_posterior(model: LogisticModel, x) -> np.ndarray:
    return model.predict_proba(x)
