import json

import numpy as np
import pytest

from roids import engine, expr
from roids.downsample import PENALTY
from roids.engine import ConfigError, GpConfig, RunRecord, evolve, mse, run, tournament_select
from roids.problems import gen_friedman, gen_nguyen6, validation_split

SMALL = dict(population_size=60, generations=12)


@pytest.fixture(scope="module")
def nguyen():
    train, test = gen_nguyen6("even", True, rng=np.random.default_rng(0))
    tr, va = validation_split(train, 0.15, [0, 1])
    return tr, va, test


def test_mse_examples():
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse([0.0, 0.0], [1.0, 3.0]) == 5.0
    assert mse([np.nan, 1.0], [0.0, 0.0]) == PENALTY
    assert mse([1e300], [0.0]) == PENALTY
    with pytest.raises(ValueError):
        mse([1.0], [1.0, 2.0])


def test_tournament_examples():
    rng = np.random.default_rng(0)
    assert all(tournament_select([0, 1, 2], [5.0, 1.0, 9.0], 50, rng) == 1 for _ in range(20))
    counts = np.bincount([tournament_select(range(4), [3.0, 3.0, 3.0, 3.0], 1, rng) for _ in range(4000)])
    np.testing.assert_allclose(counts / 4000, 0.25, atol=0.03)
    # ties resolve to the lowest index
    assert tournament_select([0, 1, 2], [2.0, 1.0, 1.0], 200, rng) == 1
    with pytest.raises(ValueError):
        tournament_select([], [], 7, rng)


def test_selection_pressure():
    rng = np.random.default_rng(1)
    N = 20
    fit = rng.permutation(N).astype(float)
    picks = engine.tournament_indices(fit, 10_000, 7, rng)
    freq = np.mean(picks == int(np.argmin(fit)))
    assert freq == pytest.approx(1 - (1 - 1 / N) ** 7, abs=0.02)


def test_generations_zero_returns_best_initial(nguyen):
    tr, va, test = nguyen
    cfg = GpConfig(population_size=40, generations=0, seed=3)
    rec = evolve(cfg, tr, va, test)
    pop = expr.ramped_half_and_half(np.random.default_rng(3), 40, 1)
    scores = engine.mse_rows(expr.evaluate_many(pop, va.X), va.y)
    best = pop[int(np.argmin(scores))]
    assert rec.elite_tree == str(best) and rec.elite_generation == 0
    assert rec.test_mse == mse(expr.evaluate(best, test.X), test.y)
    assert rec.subsets == [] and rec.best_subset_mse == []


@pytest.mark.parametrize("strategy", ["RDS", "IDS", "ROIDS"])
def test_replay_is_bit_identical(nguyen, strategy):
    tr, va, test = nguyen
    cfg = GpConfig(strategy=strategy, seed=5, **SMALL)
    a, b = evolve(cfg, tr, va, test), evolve(cfg, tr, va, test)
    assert a == b
    da, db = a.to_dict(), b.to_dict()
    da.pop("wall_clock"), db.pop("wall_clock")
    assert json.dumps(da, sort_keys=True) == json.dumps(db, sort_keys=True)
    assert evolve(GpConfig(strategy=strategy, seed=6, **SMALL), tr, va, test) != a


@pytest.mark.parametrize("strategy", ["RDS", "IDS", "ROIDS"])
def test_record_invariants_and_counts(nguyen, strategy):
    tr, va, test = nguyen
    cfg = GpConfig(strategy=strategy, seed=2, **SMALL)
    rec = evolve(cfg, tr, va, test)
    seq = rec.elite_validation_mse
    assert all(b <= a for a, b in zip(seq, seq[1:]))
    assert rec.elite_mse <= seq[-1]
    n = int(0.1 * len(tr))
    assert all(len(s) == n == len(set(s)) for s in rec.subsets)
    assert rec.subset_case_evaluations == 12 * 60 * n
    assert rec.validation_case_evaluations == 13 * 60 * len(va)
    if strategy == "RDS":
        assert rec.full_case_evaluations == 0 and rec.refresh_generations == []
    else:
        assert rec.refresh_generations == [0, 10]
        assert rec.full_case_evaluations == 2 * 1 * len(tr)
    assert expr.ExpressionTree.parse(rec.elite_tree).depth <= expr.MAX_DEPTH


def test_validate_elite_only_counts(nguyen):
    tr, va, test = nguyen
    rec = evolve(GpConfig(validate_elite_only=True, seed=1, **SMALL), tr, va, test)
    assert rec.validation_case_evaluations == 12 * len(va) + 60 * len(va)
    seq = rec.elite_validation_mse
    assert all(b <= a for a, b in zip(seq, seq[1:]))


def test_breed_respects_depth_and_size():
    rng = np.random.default_rng(0)
    pop = [expr.random_tree(rng, "full", 17, 17, 1) for _ in range(10)]
    fit = rng.uniform(size=10)
    cfg = GpConfig(population_size=10, p_mutation=1.0)
    for _ in range(50):
        pop = engine.breed(pop, fit, cfg, 1, rng)
        assert len(pop) == 10 and all(t.depth <= 17 for t in pop)


def test_short_clean_run_fits_well():
    train, test = gen_nguyen6("even", False)
    tr, va = validation_split(train, 0.15, 0)
    rec = evolve(GpConfig(population_size=200, generations=30, seed=0), tr, va, test)
    assert rec.test_mse < 0.05


def test_config_validation(nguyen):
    tr, va, test = nguyen
    bad = [
        dict(strategy="LEX"),
        dict(population_size=7),
        dict(p_crossover=1.5),
        dict(n=0.5, gamma=0.5),
        dict(init_max_depth=18, max_depth=17),
        dict(interval=0),
        dict(lof_prefilter=True, strategy="ROIDS"),
    ]
    for kw in bad:
        with pytest.raises(ConfigError):
            evolve(GpConfig(**{**SMALL, **kw}), tr, va, test)
    with pytest.raises(ConfigError):
        evolve(GpConfig(**SMALL), tr, tr, test)


def test_lof_ids_with_huge_threshold_matches_ids(nguyen):
    tr, va, test = nguyen
    ids = run(GpConfig(strategy="IDS", seed=4, **SMALL), tr, va, test)
    lof = run(GpConfig(strategy="IDS", lof_prefilter=True, lof_threshold=1e9, seed=4, **SMALL), tr, va, test)
    assert lof.removed_case_ids == []
    assert lof.subsets == ids.subsets and lof.test_mse == ids.test_mse


def test_lof_ids_filters_and_resizes():
    train, test = gen_friedman(1, n_train=200, with_outliers=True, rng=np.random.default_rng(0))
    X = train.X.copy()
    X[3] += 5.0  # move one case far from the unit cube
    train = type(train)(X, train.y, train.case_ids, outlier_flags=train.outlier_flags)
    tr, va = validation_split(train, 0.15, 0)
    rec = run(GpConfig(strategy="IDS", lof_prefilter=True, seed=0, **SMALL), tr, va, test)
    assert rec.removed_case_ids and len(rec.train_case_ids) == len(tr) - len(rec.removed_case_ids)
    if 3 in tr.case_ids:
        assert 3 in rec.removed_case_ids
    assert all(len(s) == int(0.1 * len(rec.train_case_ids)) for s in rec.subsets)


def test_record_files_round_trip(nguyen, tmp_path):
    tr, va, test = nguyen
    rec = evolve(GpConfig(seed=0, **SMALL), tr, va, test)
    path = rec.write(tmp_path, "run_0")
    back = RunRecord.from_dict(json.loads(path.read_text()))
    assert back == rec
    fitness = (tmp_path / "run_0_fitness.csv").read_text().splitlines()
    assert fitness[0] == "generation,best_subset_mse,elite_validation_mse" and len(fitness) == 13
    inclusion = (tmp_path / "run_0_inclusion.csv").read_text().splitlines()
    assert inclusion[1].split(",")[1].split() == [str(i) for i in rec.subsets[0]]
    assert not list(tmp_path.glob("*.tmp"))
