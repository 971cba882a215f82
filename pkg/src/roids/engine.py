"""Generational tree GP with down-sampled fitness and a validation elite."""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import expr
from .downsample import PENALTY, ROIDS, STRATEGIES, SamplingPlan, next_subset
from .expr import ExpressionTree
from .lof import LofParams, filter_outliers
from .problems import Dataset


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GpConfig:
    population_size: int = 500
    generations: int = 500
    tournament_size: int = 7
    p_crossover: float = 0.8
    p_mutation: float = 0.05
    max_depth: int = expr.MAX_DEPTH
    init_min_depth: int = 1
    init_max_depth: int = 6
    mutation_depth: int = 2
    n: float = 0.1
    rho: float = 0.01
    interval: int = 10
    gamma: float = 0.05
    strategy: str = ROIDS
    lof_prefilter: bool = False
    lof_k: int = 20
    lof_threshold: float = 1.5
    metric: str = "euclidean"
    error_kind: str = "absolute"
    validate_elite_only: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.population_size < 2 or self.population_size % 2:
            raise ConfigError("population_size must be an even number >= 2")
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")
        if self.tournament_size < 1:
            raise ConfigError("tournament_size must be >= 1")
        for name in ("p_crossover", "p_mutation"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 1 <= self.init_min_depth <= self.init_max_depth <= self.max_depth <= expr.MAX_DEPTH:
            raise ConfigError("need 1 <= init_min_depth <= init_max_depth <= max_depth <= 17")
        if not 0.0 < self.n <= 1.0 or not 0.0 < self.rho <= 1.0:
            raise ConfigError("n and rho must lie in (0, 1]")
        if self.interval < 1:
            raise ConfigError("interval must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if self.strategy == ROIDS and self.n + self.gamma >= 1.0:
            raise ConfigError("n + gamma must be < 1")
        if self.lof_prefilter and self.strategy != "IDS":
            raise ConfigError("the LOF pre-filter is defined for IDS only")

    def plan(self) -> SamplingPlan:
        return SamplingPlan(
            self.strategy,
            n=self.n,
            rho=self.rho,
            interval=self.interval,
            gamma=self.gamma,
            metric=self.metric,
            error_kind=self.error_kind,
        )


@dataclass
class RunRecord:
    config: dict
    seed: int
    train_case_ids: list
    subsets: list = field(default_factory=list)
    best_subset_mse: list = field(default_factory=list)
    elite_validation_mse: list = field(default_factory=list)
    elite_tree: str = ""
    elite_mse: float = float("inf")
    elite_generation: int = -1
    test_mse: float = float("nan")
    refresh_generations: list = field(default_factory=list)
    subset_case_evaluations: int = 0
    full_case_evaluations: int = 0
    validation_case_evaluations: int = 0
    removed_case_ids: list = field(default_factory=list)
    wall_clock: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(**data)

    def write(self, directory, stem: str) -> Path:
        """Write ``<stem>.json``, ``<stem>_fitness.csv`` and ``<stem>_inclusion.csv`` atomically."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        fitness = ["generation,best_subset_mse,elite_validation_mse"]
        for g, (b, e) in enumerate(zip(self.best_subset_mse, self.elite_validation_mse)):
            fitness.append(f"{g},{b!r},{e!r}")
        inclusion = ["generation,case_ids"]
        for g, ids in enumerate(self.subsets):
            inclusion.append(f"{g},{' '.join(str(i) for i in ids)}")
        _atomic_write(directory / f"{stem}_fitness.csv", "\n".join(fitness) + "\n")
        _atomic_write(directory / f"{stem}_inclusion.csv", "\n".join(inclusion) + "\n")
        # the JSON goes last: its presence marks the run as complete
        path = directory / f"{stem}.json"
        _atomic_write(path, json.dumps(self.to_dict(), sort_keys=True) + "\n")
        return path


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def mse(predictions, targets) -> float:
    """Mean squared error; non-finite results are replaced by the penalty."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.size == 0:
        raise ValueError(f"shape mismatch: {predictions.shape} vs {targets.shape}")
    return float(mse_rows(predictions[None, :], targets)[0])


def mse_rows(predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Row-wise :func:`mse` for a ``candidates x cases`` prediction matrix."""
    with np.errstate(over="ignore", invalid="ignore"):
        res = predictions - targets
        out = np.mean(res * res, axis=1)
    out[~np.isfinite(out)] = PENALTY
    return np.minimum(out, PENALTY)


def tournament_select(pop: Sequence, fitnesses, size: int = 7, rng: np.random.Generator | None = None) -> int:
    """Index of the fittest of ``size`` uniform draws (with replacement), lowest index on ties."""
    if size < 1 or len(pop) < 1:
        raise ValueError("tournament needs size >= 1 and a non-empty population")
    rng = np.random.default_rng() if rng is None else rng
    return int(tournament_indices(np.asarray(fitnesses, dtype=np.float64), 1, size, rng)[0])


def tournament_indices(fitnesses: np.ndarray, count: int, size: int, rng: np.random.Generator) -> np.ndarray:
    entrants = rng.integers(fitnesses.shape[0], size=(count, size))
    f = fitnesses[entrants]
    best = f.min(axis=1, keepdims=True)
    sentinel = fitnesses.shape[0]
    return np.where(f == best, entrants, sentinel).min(axis=1)


def breed(pop: list[ExpressionTree], fitnesses: np.ndarray, config: GpConfig, dims: int, rng) -> list[ExpressionTree]:
    """Pairwise crossover, then per-child mutation; no elitism."""
    parents = tournament_indices(fitnesses, config.population_size, config.tournament_size, rng)
    children: list[ExpressionTree] = []
    for a, b in zip(parents[0::2], parents[1::2]):
        c1, c2 = pop[a], pop[b]
        if rng.random() < config.p_crossover:
            c1, c2 = expr.subtree_crossover(c1, c2, rng, config.max_depth)
        for child in (c1, c2):
            if rng.random() < config.p_mutation:
                child = expr.subtree_mutation(child, rng, dims, config.max_depth, config.mutation_depth)
            children.append(child)
    return children


def evolve(config: GpConfig, train: Dataset, validation: Dataset, test: Dataset) -> RunRecord:
    """Run one GP search and score its validation elite on ``test``.

    Every population, including the last one produced, is scored on the
    validation set; the lowest validation MSE seen becomes the final solution.
    """
    config.validate()
    if len(validation) == 0:
        raise ConfigError("validation set is empty")
    if set(train.case_ids.tolist()) & set(validation.case_ids.tolist()):
        raise ConfigError("training and validation cases overlap")
    plan = config.plan()
    plan.check_fits(len(train))
    started = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    dims = train.dims
    record = RunRecord(config=asdict(config), seed=config.seed, train_case_ids=train.case_ids.tolist())

    pop = expr.ramped_half_and_half(rng, config.population_size, dims, config.init_min_depth, config.init_max_depth)
    elite: ExpressionTree | None = None
    Xv, yv = validation.X, validation.y

    def consider(candidates: list[ExpressionTree], scores: np.ndarray, generation: int) -> None:
        nonlocal elite
        best = int(np.argmin(scores))
        if elite is None or scores[best] < record.elite_mse:
            elite = candidates[best]
            record.elite_mse = float(scores[best])
            record.elite_generation = generation
            record.elite_tree = str(elite)

    for g in range(config.generations):
        ids = next_subset(plan, g, pop, train, rng)
        pos = train.positions_of(ids)
        rows = pos.size
        if config.validate_elite_only:
            fit = mse_rows(expr.evaluate_many(pop, train.X[pos]), train.y[pos])
            top = int(np.argmin(fit))
            consider([pop[top]], mse_rows(expr.evaluate_many([pop[top]], Xv), yv), g)
            record.validation_case_evaluations += len(validation)
        else:
            preds = expr.evaluate_many(pop, np.vstack([train.X[pos], Xv]))
            fit = mse_rows(preds[:, :rows], train.y[pos])
            consider(pop, mse_rows(preds[:, rows:], yv), g)
            record.validation_case_evaluations += len(pop) * len(validation)
        record.subset_case_evaluations += len(pop) * rows
        record.subsets.append(ids.tolist())
        record.best_subset_mse.append(float(fit.min()))
        record.elite_validation_mse.append(record.elite_mse)
        pop = breed(pop, fit, config, dims, rng)

    final_scores = mse_rows(expr.evaluate_many(pop, Xv), yv)
    consider(pop, final_scores, config.generations)
    record.validation_case_evaluations += len(pop) * len(validation)
    record.test_mse = mse(expr.evaluate(elite, test.X), test.y)
    record.refresh_generations = list(plan.refresh_generations)
    record.full_case_evaluations = plan.full_evaluations
    record.wall_clock = time.perf_counter() - started
    return record


def run_lof_ids(config: GpConfig, train: Dataset, validation: Dataset, test: Dataset) -> RunRecord:
    """Remove LOF outliers from the training split, then run plain IDS."""
    if config.strategy != "IDS" or not config.lof_prefilter:
        raise ConfigError("run_lof_ids expects strategy IDS with lof_prefilter set")
    kept = filter_outliers(train, LofParams(config.lof_k, config.lof_threshold))
    record = evolve(config, kept, validation, test)
    record.removed_case_ids = sorted(set(train.case_ids.tolist()) - set(kept.case_ids.tolist()))
    return record


def run(config: GpConfig, train: Dataset, validation: Dataset, test: Dataset) -> RunRecord:
    if config.lof_prefilter:
        return run_lof_ids(config, train, validation, test)
    return evolve(config, train, validation, test)

