"""Local Outlier Factor pre-filtering (the LOF+IDS baseline)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problems import Dataset


class LofError(ValueError):
    pass


@dataclass(frozen=True)
class LofParams:
    k: int = 20
    threshold: float = 1.5
    include_target: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise LofError("k must be >= 1")
        if self.threshold <= 0:
            raise LofError("threshold must be positive")


def _pairwise(X: np.ndarray) -> np.ndarray:
    # explicit differences, not the Gram trick, so duplicates are exactly 0 apart
    D2 = np.zeros((X.shape[0], X.shape[0]))
    for col in X.T:
        diff = col[:, None] - col[None, :]
        D2 += diff * diff
    return np.sqrt(D2)


def lof_scores(X, k: int = 20) -> np.ndarray:
    """LOF score per row, using exactly ``k`` neighbours (index order breaks distance ties).

    Reachability distance is ``max(k-distance(o), d(p, o))``; a tiny constant
    keeps the density of duplicated points finite, so a cloud of identical
    points scores 1 everywhere.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if k < 1 or n < k + 1:
        raise LofError(f"LOF with k={k} needs at least {k + 1} rows, got {n}")
    D = _pairwise(X)
    np.fill_diagonal(D, np.inf)
    nn = np.argsort(D, axis=1, kind="stable")[:, :k]
    nn_dist = np.take_along_axis(D, nn, axis=1)
    k_distance = nn_dist[:, -1]
    reach = np.maximum(k_distance[nn], nn_dist)
    lrd = 1.0 / (reach.mean(axis=1) + 1e-10)
    return lrd[nn].mean(axis=1) / lrd


def filter_outliers(ds: Dataset, params: LofParams = LofParams(), return_scores: bool = False):
    """Drop cases scoring above ``params.threshold``, preserving order and ids.

    With ``return_scores`` the per-case scores of the input come back as well.
    """
    X = np.column_stack([ds.X, ds.y]) if params.include_target else ds.X
    if params.k >= len(ds):
        raise LofError(f"k={params.k} must be smaller than the {len(ds)} cases")
    scores = lof_scores(X, params.k)
    keep = scores <= params.threshold
    if not keep.any():
        raise LofError("every case was flagged as an outlier")
    kept = ds.take(np.flatnonzero(keep))
    return (kept, scores) if return_scores else kept
