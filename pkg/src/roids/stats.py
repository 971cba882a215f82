"""Result analysis: medians, Mann-Whitney U tests, mean rankings, case inclusion frequencies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

ALPHA = 0.05


def median(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("median of an empty sample")
    return float(np.median(values))


def _exact_two_sided(doubled_ranks: np.ndarray, n_a: int, observed: int) -> float:
    """P(|2R - n_a(N+1)| >= |observed|) over all equally likely rank assignments of ``a``.

    ``doubled_ranks`` are twice the midranks, hence integers even with ties.
    """
    N = doubled_ranks.size
    top = int(doubled_ranks.sum())
    # ways[j, s]: subsets of size j whose doubled ranks sum to s
    ways = np.zeros((n_a + 1, top + 1), dtype=np.int64)
    ways[0, 0] = 1
    for r in doubled_ranks.astype(np.int64):
        ways[1:, r:] += ways[:-1, : top + 1 - r].copy()
    sums = np.arange(top + 1)
    extreme = np.abs(sums - n_a * (N + 1)) >= abs(observed)
    return float(ways[n_a, extreme].sum()) / math.comb(N, n_a)


def mann_whitney_u(a, b, continuity: bool = True, exact_limit: int = 20) -> tuple[float, float]:
    """Two-sided Mann-Whitney U test; returns ``(U of a, p)``.

    Ties get midranks. Up to ``exact_limit`` pooled observations the p-value is
    the exact permutation probability; beyond that a normal approximation with
    tie-corrected variance (and optional continuity correction) is used.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    n_a, n_b = a.size, b.size
    if n_a < 1 or n_b < 1:
        raise ValueError("both samples need at least one value")
    pooled = np.concatenate([a, b])
    ranks = rankdata(pooled)
    r_a = float(ranks[:n_a].sum())
    u = r_a - n_a * (n_a + 1) / 2.0
    N = n_a + n_b
    if np.all(pooled == pooled[0]):
        return u, 1.0
    if N <= exact_limit:
        doubled = np.rint(2 * ranks).astype(np.int64)
        observed = int(doubled[:n_a].sum()) - n_a * (N + 1)
        return u, min(1.0, _exact_two_sided(doubled, n_a, observed))
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(counts**3 - counts)) / (N * (N - 1))
    var = n_a * n_b / 12.0 * ((N + 1) - tie_term)
    if var <= 0:
        return u, 1.0
    dev = abs(u - n_a * n_b / 2.0)
    if continuity:
        dev = max(dev - 0.5, 0.0)
    z = dev / math.sqrt(var)
    return u, min(1.0, math.erfc(z / math.sqrt(2.0)))


@dataclass
class ResultTable:
    """Final test MSEs per (problem, strategy) cell, in display order."""

    problems: list
    strategies: list
    cells: dict = field(default_factory=dict)

    def add(self, problem: str, strategy: str, value: float) -> None:
        if problem not in self.problems:
            self.problems.append(problem)
        if strategy not in self.strategies:
            self.strategies.append(strategy)
        self.cells.setdefault((problem, strategy), []).append(float(value))

    def values(self, problem: str, strategy: str) -> list:
        return self.cells.get((problem, strategy), [])

    def is_complete(self, problem: str) -> bool:
        return all(self.values(problem, s) for s in self.strategies)

    def medians(self) -> dict:
        return {key: median(v) for key, v in self.cells.items() if v}

    def ranks(self) -> dict:
        """Per-problem ranks (1 = lowest median; ties share the mean rank)."""
        meds = self.medians()
        out = {}
        for p in self.problems:
            if not self.is_complete(p):
                continue
            r = rankdata([meds[(p, s)] for s in self.strategies], method="average")
            out[p] = dict(zip(self.strategies, r.tolist()))
        return out


def mean_ranking(table: ResultTable) -> dict:
    ranks = table.ranks()
    if not ranks:
        raise ValueError("no problem has every strategy populated")
    return {s: float(np.mean([ranks[p][s] for p in ranks])) for s in table.strategies}


def significance(table: ResultTable, alpha: float = ALPHA, continuity: bool = True) -> list[dict]:
    rows = []
    for p in table.problems:
        for s1, s2 in combinations(table.strategies, 2):
            a, b = table.values(p, s1), table.values(p, s2)
            if not a or not b:
                continue
            u, pv = mann_whitney_u(a, b, continuity=continuity)
            rows.append({"problem": p, "a": s1, "b": s2, "U": u, "p": pv, "significant": pv < alpha})
    return rows


def read_inclusion_csv(path) -> list[np.ndarray]:
    """Per-generation subset ids from an inclusion log (space-separated ids)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    subsets = []
    for line in lines[1:]:
        if not line.strip():
            continue
        _, ids = line.split(",", 1)
        subsets.append(np.array([int(t) for t in ids.split()], dtype=np.int64))
    return subsets


def inclusion_frequency(
    logs: Sequence[Sequence[Iterable[int]]],
    case_ids,
    train_ids: Sequence[Iterable[int]] | None = None,
) -> np.ndarray:
    """Share of generations each case appears in the subset, averaged over runs.

    ``train_ids`` lists each run's training cases; a run only contributes to
    the average of cases it could have sampled. Cases never in any training
    split get NaN.
    """
    case_ids = np.asarray(case_ids, dtype=np.int64)
    if len(logs) == 0:
        raise ValueError("need at least one run")
    pos = {int(c): i for i, c in enumerate(case_ids)}
    total = np.zeros(case_ids.size)
    runs = np.zeros(case_ids.size)
    for k, log in enumerate(logs):
        counts = np.zeros(case_ids.size)
        n_gen = 0
        for subset in log:
            n_gen += 1
            for c in subset:
                try:
                    counts[pos[int(c)]] += 1
                except KeyError:
                    raise ValueError(f"run {k} logs unknown case id {int(c)}") from None
        if n_gen == 0:
            continue
        if train_ids is None:
            eligible = np.ones(case_ids.size, dtype=bool)
        else:
            eligible = np.isin(case_ids, np.fromiter(train_ids[k], dtype=np.int64))
        total[eligible] += counts[eligible] / n_gen
        runs[eligible] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(runs > 0, total / np.maximum(runs, 1), np.nan)
