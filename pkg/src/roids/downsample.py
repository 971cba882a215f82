"""Random, informed and outlier-aware informed down-sampling of training cases."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import ExpressionTree, evaluate_many
from .problems import Dataset, floor_count

PENALTY = 1e12

RDS, IDS, ROIDS = "RDS", "IDS", "ROIDS"
STRATEGIES = (RDS, IDS, ROIDS)


class DownsampleConfigError(ValueError):
    pass


def subset_size(rate: float, n_cases: int) -> int:
    return max(1, floor_count(rate, n_cases))


def rds_sample(T_ids, n: float, rng: np.random.Generator) -> np.ndarray:
    """Draw ``max(1, floor(n |T|))`` distinct ids uniformly."""
    T_ids = np.asarray(T_ids)
    if T_ids.size == 0:
        raise DownsampleConfigError("cannot sample from an empty training set")
    if not 0.0 < n <= 1.0:
        raise DownsampleConfigError(f"down-sample rate must lie in (0, 1], got {n}")
    return rng.choice(T_ids, size=subset_size(n, T_ids.size), replace=False)


@dataclass(frozen=True, eq=False)
class CaseErrorMatrix:
    errors: np.ndarray  # cases x sampled candidates
    case_ids: np.ndarray

    @property
    def row_means(self) -> np.ndarray:
        return self.errors.mean(axis=1)


def case_errors(predictions: np.ndarray, y: np.ndarray, kind: str = "absolute") -> np.ndarray:
    """Per-case error; non-finite values and values beyond the penalty become ``PENALTY``."""
    with np.errstate(over="ignore", invalid="ignore"):
        diff = predictions - y
        err = np.abs(diff) if kind == "absolute" else diff * diff
    err = np.where(np.isfinite(err), err, PENALTY)
    return np.minimum(err, PENALTY)


def compute_case_error_matrix(
    pop_sample: Sequence[ExpressionTree], train: Dataset, kind: str = "absolute"
) -> CaseErrorMatrix:
    if len(pop_sample) == 0:
        raise DownsampleConfigError("need at least one candidate")
    preds = evaluate_many(pop_sample, train.X)
    return CaseErrorMatrix(case_errors(preds, train.y[None, :], kind).T.copy(), train.case_ids.copy())


def mask_outliers(S: CaseErrorMatrix, gamma: float) -> np.ndarray:
    """Drop the ``floor(gamma |T|)`` cases with the highest mean error.

    Ties on the mean remove the higher case id first. Survivors keep their
    original order.
    """
    if not 0.0 <= gamma < 1.0:
        raise DownsampleConfigError(f"gamma must lie in [0, 1), got {gamma}")
    ids = S.case_ids
    m = floor_count(gamma, ids.size)
    if m == 0:
        return ids.copy()
    order = np.lexsort((-ids, -S.row_means))
    keep = np.ones(ids.size, dtype=bool)
    keep[order[:m]] = False
    return ids[keep]


def case_distance_matrix(S: CaseErrorMatrix, kept, metric: str = "euclidean") -> np.ndarray:
    """Pairwise distances between the case error vectors of ``kept``."""
    pos = {int(c): i for i, c in enumerate(S.case_ids)}
    try:
        rows = S.errors[[pos[int(c)] for c in kept]]
    except KeyError as exc:
        raise DownsampleConfigError(f"case id {exc.args[0]} not in the error matrix") from None
    n = rows.shape[0]
    D = np.zeros((n, n))
    # column-wise accumulation keeps memory at O(n^2) and the sum order fixed
    for col in rows.T:
        diff = np.abs(col[:, None] - col[None, :])
        D += diff * diff if metric == "euclidean" else diff
    if metric == "euclidean":
        np.sqrt(D, out=D)
    elif metric != "manhattan":
        raise DownsampleConfigError(f"unknown metric {metric!r}")
    return D


def farthest_first(D: np.ndarray, k: int, rng: np.random.Generator, start: int | None = None) -> np.ndarray:
    """Greedy k-center traversal over a distance matrix.

    Starts at a uniformly random index (or ``start``) and repeatedly adds the
    point whose distance to the nearest chosen point is largest, breaking
    ties by the lowest index.
    """
    D = np.asarray(D)
    side = D.shape[0]
    if not 1 <= k <= side:
        raise DownsampleConfigError(f"cannot pick {k} of {side} points")
    first = int(rng.integers(side)) if start is None else int(start)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = first
    nearest = D[first].astype(np.float64, copy=True)
    nearest[first] = -np.inf
    for step in range(1, k):
        nxt = int(np.argmax(nearest))
        chosen[step] = nxt
        np.minimum(nearest, D[nxt], out=nearest)
        nearest[chosen[: step + 1]] = -np.inf
    return chosen


@dataclass
class SamplingPlan:
    """Cached sampling state of one run; refreshed by :func:`next_subset`."""

    strategy: str
    n: float = 0.1
    rho: float = 0.01
    interval: int = 10
    gamma: float = 0.05
    metric: str = "euclidean"
    error_kind: str = "absolute"
    kept_case_ids: np.ndarray | None = None
    distance_matrix: np.ndarray | None = None
    last_refresh_generation: int | None = None
    refresh_generations: list = field(default_factory=list)
    full_evaluations: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise DownsampleConfigError(f"unknown strategy {self.strategy!r}")
        if not 0.0 < self.n <= 1.0:
            raise DownsampleConfigError("down-sample rate must lie in (0, 1]")
        if not 0.0 < self.rho <= 1.0:
            raise DownsampleConfigError("parent sampling rate must lie in (0, 1]")
        if self.interval < 1:
            raise DownsampleConfigError("refresh interval must be >= 1")
        gamma = self.effective_gamma
        if not 0.0 <= gamma < 1.0:
            raise DownsampleConfigError("gamma must lie in [0, 1)")

    @property
    def effective_gamma(self) -> float:
        return self.gamma if self.strategy == ROIDS else 0.0

    def check_fits(self, n_train: int) -> None:
        size = subset_size(self.n, n_train)
        kept = n_train - floor_count(self.effective_gamma, n_train)
        if size > kept:
            raise DownsampleConfigError(
                f"subset of {size} cases does not fit into {kept} unmasked cases (n + gamma too large)"
            )

    def refresh(self, generation: int, pop: Sequence[ExpressionTree], train: Dataset, rng) -> None:
        k = min(len(pop), math.ceil(self.rho * len(pop) - 1e-9))
        picked = np.sort(rng.choice(len(pop), size=k, replace=False))
        S = compute_case_error_matrix([pop[i] for i in picked], train, self.error_kind)
        self.full_evaluations += k * len(train)
        self.kept_case_ids = mask_outliers(S, self.effective_gamma)
        self.distance_matrix = case_distance_matrix(S, self.kept_case_ids, self.metric)
        self.last_refresh_generation = generation
        self.refresh_generations.append(generation)


def next_subset(
    plan: SamplingPlan,
    generation: int,
    pop: Sequence[ExpressionTree],
    train: Dataset,
    rng: np.random.Generator,
) -> np.ndarray:
    """Case ids the population is scored on in ``generation``."""
    plan.check_fits(len(train))
    if plan.strategy == RDS:
        return rds_sample(train.case_ids, plan.n, rng)
    if generation % plan.interval == 0 or plan.distance_matrix is None:
        plan.refresh(generation, pop, train, rng)
    size = subset_size(plan.n, len(train))
    picked = farthest_first(plan.distance_matrix, size, rng)
    return plan.kept_case_ids[picked]
