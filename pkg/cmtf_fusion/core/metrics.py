"""
Recovery metrics: factor match score, model fit, k-means and clustering accuracy.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Any, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans
from sklearn.metrics.cluster import contingency_matrix

from .exceptions import ValidationError
from .tensor_ops import frob_norm, squared_residual

logger = logging.getLogger(__name__)

# Above this size permutations are matched with the Hungarian algorithm.
EXHAUSTIVE_MAX_COLUMNS = 8
EXHAUSTIVE_MAX_CLUSTERS = 6


@dataclass(frozen=True)
class PermutationMatch:
    """``permutation[r]`` is the estimated column matched to true column r."""
    permutation: Tuple[int, ...]
    scores: Tuple[float, ...]

    @property
    def mean_score(self) -> float:
        return float(np.mean(self.scores)) if self.scores else 0.0


def _exhaustive_assignment(S: np.ndarray) -> Tuple[int, ...]:
    n = S.shape[0]
    rows = np.arange(n)
    best, best_total = tuple(range(n)), -np.inf
    for perm in itertools.permutations(range(n)):
        total = S[rows, perm].sum()
        if total > best_total:
            best, best_total = perm, total
    return tuple(int(p) for p in best)


def best_column_permutation(S: Any, exhaustive_limit: int = EXHAUSTIVE_MAX_COLUMNS) -> PermutationMatch:
    """Assignment of columns of S to rows maximizing the summed scores."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError(f"Score matrix must be square, got shape {S.shape}")
    if S.shape[0] <= exhaustive_limit:
        perm = _exhaustive_assignment(S)
    else:
        rows, cols = linear_sum_assignment(S, maximize=True)
        perm = tuple(int(c) for _, c in sorted(zip(rows, cols)))
    scores = tuple(float(S[r, c]) for r, c in enumerate(perm))
    return PermutationMatch(perm, scores)


def congruence_matrix(U_true: Any, U_est: Any) -> np.ndarray:
    """|cosine| between every true column (rows) and every estimated column."""
    U_true = np.asarray(U_true, dtype=np.float64)
    U_est = np.asarray(U_est, dtype=np.float64)
    if U_true.shape != U_est.shape or U_true.ndim != 2:
        raise ValidationError(f"FMS needs equally shaped matrices, got {U_true.shape} and {U_est.shape}")
    n_true = np.linalg.norm(U_true, axis=0)
    n_est = np.linalg.norm(U_est, axis=0)
    if np.any(n_true == 0) or np.any(n_est == 0):
        raise ValidationError("FMS is undefined for zero columns")
    cos = np.abs(U_true.T @ U_est) / np.outer(n_true, n_est)
    return np.clip(cos, 0.0, 1.0)


def fms_match(U_true: Any, U_est: Any) -> PermutationMatch:
    return best_column_permutation(congruence_matrix(U_true, U_est))


def fms(U_true: Any, U_est: Any) -> float:
    """Mean |cosine| of matched columns under the best column permutation."""
    return fms_match(U_true, U_est).mean_score


def fit_percentage(Z: Any, Z_hat: Any) -> float:
    """100 * (1 - ||Z - Z_hat||^2 / ||Z||^2)."""
    norm = frob_norm(Z)
    if norm == 0:
        raise ValidationError("Fit is undefined for zero-norm data")
    return 100.0 * (1.0 - squared_residual(Z, Z_hat) / norm**2)


def _seed_from(rng: Any) -> Optional[int]:
    if rng is None:
        return None
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**31 - 1))
    return int(rng)


def kmeans(points: Any, k: int, rng: Any = None, restarts: int = 10, iters: int = 300) -> np.ndarray:
    """
    Lloyd's algorithm with k-means++ seeding, best of ``restarts`` by inertia.

    *rng* may be a numpy Generator or an integer seed.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"k-means needs an N x d matrix, got shape {X.shape}")
    if k < 1 or X.shape[0] < k:
        raise ValidationError(f"k-means needs 1 <= k <= N, got k={k}, N={X.shape[0]}")
    model = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=restarts,
        max_iter=iters,
        random_state=_seed_from(rng),
    )
    labels = model.fit_predict(X)
    logger.debug("k-means k=%d inertia=%.6g", k, model.inertia_)
    return labels.astype(int)


def clustering_accuracy(labels_true: Sequence[Any], labels_est: Sequence[Any]) -> float:
    """Percentage of agreeing labels under the best renaming of estimated labels."""
    labels_true = np.asarray(labels_true)
    labels_est = np.asarray(labels_est)
    if labels_true.shape != labels_est.shape or labels_true.ndim != 1:
        raise ValidationError(
            f"Label vectors must have equal length, got {labels_true.shape} and {labels_est.shape}"
        )
    if labels_true.size == 0:
        raise ValidationError("Clustering accuracy needs at least one label")
    table = contingency_matrix(labels_true, labels_est)
    size = max(table.shape)
    padded = np.zeros((size, size))
    padded[: table.shape[0], : table.shape[1]] = table
    match = best_column_permutation(padded, exhaustive_limit=EXHAUSTIVE_MAX_CLUSTERS)
    return 100.0 * sum(match.scores) / labels_true.size
