"""Benchmark datasets: nguyen-6 and Friedman generators, outlier injection, CSV I/O, splits."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    pass


def floor_count(rate: float, total: int) -> int:
    """``floor(rate * total)`` robust to products like 0.29 * 100 = 28.999..."""
    return int(math.floor(rate * total + 1e-9))


def ceil_count(rate: float, total: int) -> int:
    return int(math.ceil(rate * total - 1e-9))


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    case_ids: np.ndarray
    provenance: dict = field(default_factory=dict)
    outlier_flags: np.ndarray | None = None
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=np.float64)
        ids = np.asarray(self.case_ids, dtype=np.int64)
        if not (X.shape[0] == y.shape[0] == ids.shape[0]):
            raise DatasetError(f"row counts differ: X {X.shape[0]}, y {y.shape[0]}, ids {ids.shape[0]}")
        if np.unique(ids).size != ids.size:
            raise DatasetError("case_ids must be unique")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "case_ids", ids)
        if self.outlier_flags is not None:
            flags = np.asarray(self.outlier_flags, dtype=bool)
            if flags.shape != y.shape:
                raise DatasetError("outlier_flags must align with y")
            object.__setattr__(self, "outlier_flags", flags)
        if self.feature_names is None:
            object.__setattr__(self, "feature_names", tuple(f"x{i}" for i in range(X.shape[1])))

    def __len__(self) -> int:
        return int(self.y.shape[0])

    @property
    def dims(self) -> int:
        return int(self.X.shape[1])

    def take(self, positions) -> "Dataset":
        """Row subset by position, keeping identities and flags."""
        positions = np.asarray(positions, dtype=np.int64)
        flags = None if self.outlier_flags is None else self.outlier_flags[positions]
        return replace(
            self,
            X=self.X[positions],
            y=self.y[positions],
            case_ids=self.case_ids[positions],
            outlier_flags=flags,
        )

    def positions_of(self, ids) -> np.ndarray:
        lookup = {int(c): i for i, c in enumerate(self.case_ids)}
        try:
            return np.array([lookup[int(c)] for c in ids], dtype=np.int64)
        except KeyError as exc:
            raise DatasetError(f"case id {exc.args[0]} not in dataset") from None


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.15
    validation_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        for name in ("test_fraction", "validation_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise DatasetError(f"{name} must lie in (0, 1), got {v}")


def _linspace_x(points) -> np.ndarray:
    return np.asarray(points, dtype=np.float64)[:, None]


def nguyen6(x):
    return np.sin(x) + np.sin(x + x * x)


def gen_nguyen6(
    variant: str = "even",
    with_outliers: bool = False,
    n: int = 100,
    rng: np.random.Generator | None = None,
    fraction: float = 0.05,
    scale: float = 4.0,
) -> tuple[Dataset, Dataset]:
    """Training and test sets for ``sin(x) + sin(x + x^2)``.

    ``even`` spaces ``n`` points over [-1, 1]; ``uneven`` puts ``floor(0.1 n)``
    of them on [-1, 0] and the rest on [0, 1]. When both grids would hold 0 the
    point is kept only in the left one. The test set is always 100 clean points.
    """
    if n < 10:
        raise DatasetError("nguyen-6 needs n >= 10")
    if variant == "even":
        x = np.linspace(-1.0, 1.0, n)
    elif variant == "uneven":
        left = floor_count(0.1, n)
        right = n - left
        # right grid excludes 0 so every x <= 0 case comes from the left grid
        x = np.concatenate([np.linspace(-1.0, 0.0, left), np.linspace(0.0, 1.0, right + 1)[1:]])
    else:
        raise DatasetError(f"unknown nguyen-6 variant {variant!r}")
    prov = {"generator": "nguyen6", "variant": variant, "n": n}
    train = Dataset(_linspace_x(x), nguyen6(x), np.arange(n), provenance=prov)
    xt = np.linspace(-1.0, 1.0, 100)
    test = Dataset(_linspace_x(xt), nguyen6(xt), np.arange(100), provenance={**prov, "split": "test"})
    if with_outliers:
        if rng is None:
            raise DatasetError("outlier injection needs an rng")
        train = inject_outliers(train, fraction, scale, rng)
    return train, test


FRIEDMAN_DIMS = {1: 5, 2: 4, 3: 4}


def friedman_target(which: int, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if which == 1:
        return (
            10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
            + 20.0 * (X[:, 2] - 0.5) ** 2
            + 10.0 * X[:, 3]
            + 5.0 * X[:, 4]
        )
    inner = X[:, 1] * X[:, 2] - 1.0 / (X[:, 1] * X[:, 3])
    if which == 2:
        return np.sqrt(X[:, 0] ** 2 + inner**2)
    if which == 3:
        return np.arctan(inner / X[:, 0])
    raise DatasetError(f"unknown friedman problem {which}")


def _friedman_inputs(which: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if which == 1:
        return rng.uniform(0.0, 1.0, size=(n, 5))
    lo = np.array([0.0, 40.0 * np.pi, 0.0, 1.0])
    hi = np.array([100.0, 560.0 * np.pi, 1.0, 11.0])
    X = rng.uniform(lo, hi, size=(n, 4))
    if which == 3:
        while np.any(X[:, 0] == 0.0):
            bad = X[:, 0] == 0.0
            X[bad] = rng.uniform(lo, hi, size=(int(bad.sum()), 4))
    return X


def gen_friedman(
    which: int,
    n_train: int = 100,
    n_test: int = 100,
    with_outliers: bool = False,
    rng: np.random.Generator | None = None,
    noise: float = 0.0,
    fraction: float = 0.05,
    scale: float = 4.0,
) -> tuple[Dataset, Dataset]:
    """Friedman #1-#3 with optional Gaussian observation noise (off by default)."""
    if which not in FRIEDMAN_DIMS:
        raise DatasetError(f"unknown friedman problem {which}")
    if n_train < 1 or n_test < 1:
        raise DatasetError("n_train and n_test must be positive")
    rng = np.random.default_rng() if rng is None else rng
    prov = {"generator": f"friedman{which}", "noise": noise}
    parts = []
    for n in (n_train, n_test):
        X = _friedman_inputs(which, n, rng)
        y = friedman_target(which, X)
        if noise:
            y = y + rng.normal(0.0, noise, size=n)
        parts.append((X, y))
    train = Dataset(parts[0][0], parts[0][1], np.arange(n_train), provenance=prov)
    test = Dataset(parts[1][0], parts[1][1], np.arange(n_test), provenance={**prov, "split": "test"})
    if with_outliers:
        train = inject_outliers(train, fraction, scale, rng)
    return train, test


def inject_outliers(
    ds: Dataset, fraction: float = 0.05, scale: float = 4.0, rng: np.random.Generator | None = None
) -> Dataset:
    """Add N(0, (scale * std(y))^2) noise to ``floor(fraction * |y|)`` random targets."""
    if not 0.0 < fraction < 1.0:
        raise DatasetError("fraction must lie in (0, 1)")
    count = floor_count(fraction, len(ds))
    if count < 1:
        raise DatasetError(f"{len(ds)} cases are too few for fraction {fraction}")
    sd = float(np.std(ds.y))
    if sd == 0.0:
        raise DatasetError("cannot scale outliers for a constant target")
    rng = np.random.default_rng() if rng is None else rng
    picked = np.sort(rng.choice(len(ds), size=count, replace=False))
    y = ds.y.copy()
    y[picked] += rng.normal(0.0, scale * sd, size=count)
    flags = np.zeros(len(ds), dtype=bool)
    flags[picked] = True
    prov = {**ds.provenance, "outlier_fraction": fraction, "outlier_scale": scale}
    return replace(ds, y=y, outlier_flags=flags, provenance=prov)


def holdout(ds: Dataset, fraction: float, seed, rounding=floor_count) -> tuple[Dataset, Dataset]:
    """Set aside ``rounding(fraction, |ds|)`` random cases; returns ``(rest, held_out)`` in row order."""
    if not 0.0 < fraction < 1.0:
        raise DatasetError(f"holdout fraction must lie in (0, 1), got {fraction}")
    order = np.random.default_rng(seed).permutation(len(ds))
    n_held = rounding(fraction, len(ds))
    return ds.take(np.sort(order[n_held:])), ds.take(np.sort(order[:n_held]))


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Partition into (train, validation, test), drawn from ``spec.seed``.

    The test share is rounded up (1503 cases -> 226 test cases), the
    validation share of the remainder is rounded down.
    """
    if len(ds) < 10:
        raise DatasetError("need at least 10 cases to split")
    rest, test = holdout_test_set(ds, spec.test_fraction, spec.seed)
    train, val = validation_split(rest, spec.validation_fraction, [spec.seed, 1])
    return train, val, test


def holdout_test_set(ds: Dataset, fraction: float, seed) -> tuple[Dataset, Dataset]:
    return holdout(ds, fraction, seed, rounding=ceil_count)


def validation_split(train: Dataset, fraction: float, seed) -> tuple[Dataset, Dataset]:
    """Hold out ``floor(fraction * |train|)`` cases for picking the final solution."""
    return holdout(train, fraction, seed)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(ds: Dataset, path, target_name: str = "y", sidecar: dict | None = None) -> None:
    """Write ``case_id``, feature columns and target; optionally a JSON sidecar next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", *ds.feature_names, target_name])
        for cid, row, target in zip(ds.case_ids, ds.X, ds.y):
            w.writerow([int(cid), *(_fmt(v) for v in row), _fmt(target)])
    os.replace(tmp, path)
    if sidecar is not None:
        meta = dict(sidecar)
        meta.setdefault("provenance", ds.provenance)
        if ds.outlier_flags is not None:
            meta["outlier_flags"] = [bool(f) for f in ds.outlier_flags]
        side = sidecar_path(path)
        tmp = side.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, side)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".json")


def load_csv(path, target_column: str, id_column: str | None = None) -> Dataset:
    """Read a headed, comma-separated numeric file.

    Every column except the target (and ``id_column``, if given) becomes a
    feature in file order. Case ids default to the row order. A JSON sidecar
    with ``outlier_flags`` is picked up when present.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8-sig") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if target_column not in header:
        raise DatasetError(f"{path}: target column {target_column!r} not in header {header}")
    if id_column is not None and id_column not in header:
        raise DatasetError(f"{path}: id column {id_column!r} not in header")
    data = np.empty((len(rows) - 1, len(header)), dtype=np.float64)
    for r, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise DatasetError(f"{path}: row {r + 1} has {len(row)} cells, expected {len(header)}")
        for c, cell in enumerate(row):
            try:
                data[r, c] = float(cell)
            except ValueError:
                raise DatasetError(
                    f"{path}: row {r + 1}, column {header[c]!r}: non-numeric cell {cell!r}"
                ) from None
            if not np.isfinite(data[r, c]):
                raise DatasetError(f"{path}: row {r + 1}, column {header[c]!r}: missing value")
    t = header.index(target_column)
    skip = {t} if id_column is None else {t, header.index(id_column)}
    feats = [i for i in range(len(header)) if i not in skip]
    ids = np.arange(data.shape[0]) if id_column is None else data[:, header.index(id_column)].astype(np.int64)
    flags = None
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        if "outlier_flags" in meta:
            flags = np.array(meta["outlier_flags"], dtype=bool)
    return Dataset(
        data[:, feats],
        data[:, t],
        ids,
        provenance={"path": str(path), "target": target_column},
        outlier_flags=flags,
        feature_names=tuple(header[i] for i in feats),
    )
