"""Command line: generate datasets, run experiments, analyze results, LOF-filter a CSV."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, stats
from .downsample import DownsampleConfigError
from .engine import ConfigError, GpConfig, RunRecord, run
from .lof import LofError, LofParams, filter_outliers
from .problems import (
    DatasetError,
    gen_friedman,
    gen_nguyen6,
    holdout_test_set,
    load_csv,
    validation_split,
    write_csv,
)

log = logging.getLogger("roids")

EXIT_OK, EXIT_RUN_FAILED, EXIT_CONFIG = 0, 1, 2
STRATEGY_CHOICES = ("RDS", "IDS", "ROIDS", "LOF+IDS")
GENERATORS = ("nguyen6", "friedman1", "friedman2", "friedman3")
_GP_FIELDS = {f.name for f in fields(GpConfig)}


class ExperimentConfigError(ValueError):
    pass


def default_out() -> Path:
    return Path(os.environ.get("ROIDS_OUT", "out"))


# ---------------------------------------------------------------- datasets


def generate(entry: dict, seed: int):
    """Build (train, test) for a generator entry such as ``{"generator": "nguyen6", ...}``."""
    gen = entry["generator"]
    rng = np.random.default_rng(seed)
    outliers = bool(entry.get("outliers", False))
    fraction = float(entry.get("fraction", 0.05))
    scale = float(entry.get("scale", 4.0))
    if gen == "nguyen6":
        return gen_nguyen6(
            entry.get("variant", "even"), outliers, int(entry.get("n", 100)), rng, fraction, scale
        )
    if gen in ("friedman1", "friedman2", "friedman3"):
        return gen_friedman(
            int(gen[-1]),
            int(entry.get("n_train", 100)),
            int(entry.get("n_test", 100)),
            outliers,
            rng,
            float(entry.get("noise", 0.0)),
            fraction,
            scale,
        )
    raise ExperimentConfigError(f"unknown generator {gen!r}")


def default_problem_name(entry: dict) -> str:
    if "csv" in entry:
        return Path(entry["csv"]).stem
    parts = [entry["generator"]]
    if entry["generator"] == "nguyen6":
        parts.append(entry.get("variant", "even"))
    if entry.get("outliers"):
        parts.append("outliers")
    return "_".join(parts)


def _sidecar(entry: dict, seed: int, split_name: str) -> dict:
    return {
        "generator": entry.get("generator", "csv"),
        "seed": seed,
        "fraction": float(entry.get("fraction", 0.05)) if entry.get("outliers") else None,
        "scale": float(entry.get("scale", 4.0)) if entry.get("outliers") else None,
        "split": split_name,
        "entry": entry,
    }


def materialize(entry: dict, seed: int, directory: Path) -> None:
    """Write ``train.csv`` / ``test.csv`` (with JSON sidecars) for one problem."""
    if "csv" in entry:
        src = Path(entry["csv"])
        if not src.exists():
            raise ExperimentConfigError(f"dataset file {src} does not exist")
        ds = load_csv(src, entry.get("target", "y"), entry.get("id_column"))
        # validation is re-drawn per run, so only the test holdout is fixed here
        train, test = holdout_test_set(ds, float(entry.get("test_fraction", 0.15)), seed)
    else:
        train, test = generate(entry, seed)
    write_csv(train, directory / "train.csv", sidecar=_sidecar(entry, seed, "train"))
    write_csv(test, directory / "test.csv", sidecar=_sidecar(entry, seed, "test"))


def load_problem(directory: Path):
    return load_csv(directory / "train.csv", "y", "case_id"), load_csv(directory / "test.csv", "y", "case_id")


# ---------------------------------------------------------------- configuration


@dataclass
class ExperimentConfig:
    problems: list
    strategies: list
    runs: int = 1
    master_seed: int = 0
    gp: dict = field(default_factory=dict)
    out: str | None = None
    parallelism: int = 1
    validation_fraction: float = 0.15

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ExperimentConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.check()
        return cfg

    def check(self) -> None:
        if self.runs < 1:
            raise ExperimentConfigError("runs must be >= 1")
        if not self.problems:
            raise ExperimentConfigError("no problems configured")
        for s in self.strategies:
            if s not in STRATEGY_CHOICES:
                raise ExperimentConfigError(f"unknown strategy {s!r}; choose from {STRATEGY_CHOICES}")
        names = []
        for entry in self.problems:
            if ("csv" in entry) == ("generator" in entry):
                raise ExperimentConfigError(f"problem needs exactly one of 'csv' or 'generator': {entry}")
            if "csv" in entry and not Path(entry["csv"]).exists():
                raise ExperimentConfigError(f"dataset file {entry['csv']} does not exist")
            entry.setdefault("name", default_problem_name(entry))
            names.append(entry["name"])
            for key in list(entry.get("gp", {})) + list(self.gp):
                if key not in _GP_FIELDS:
                    raise ExperimentConfigError(f"unknown GP setting {key!r}")
        if len(set(names)) != len(names):
            raise ExperimentConfigError("problem names must be unique")

    def gp_config(self, entry: dict, strategy: str, seed: int) -> GpConfig:
        settings = {"generations": 100 if entry.get("generator") == "nguyen6" else 500}
        settings.update(self.gp)
        settings.update(entry.get("gp", {}))
        if strategy == "LOF+IDS":
            settings.update(strategy="IDS", lof_prefilter=True)
        else:
            settings.update(strategy=strategy, lof_prefilter=False)
        settings["seed"] = seed
        cfg = GpConfig(**settings)
        cfg.validate()
        return cfg


# ---------------------------------------------------------------- running


def _run_one(task: dict) -> tuple[str, str, int, str | None]:
    problem_dir = Path(task["problem_dir"])
    name, strategy, k = task["problem"], task["strategy"], task["run"]
    try:
        train_full, test = load_problem(problem_dir)
        cfg = GpConfig(**task["gp"])
        train, val = validation_split(train_full, task["validation_fraction"], [cfg.seed, 1])
        record = run(cfg, train, val, test)
        record.write(problem_dir / strategy, f"run_{k}")
        return name, strategy, k, None
    except Exception:
        err = traceback.format_exc()
        (problem_dir / strategy).mkdir(parents=True, exist_ok=True)
        (problem_dir / strategy / f"run_{k}.error.txt").write_text(err, encoding="utf-8")
        return name, strategy, k, err


def run_experiment(cfg: ExperimentConfig, out: Path, resume: bool = False, parallelism: int | None = None) -> int:
    """Execute every (problem, strategy, run) cell; returns the number of failed runs."""
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    manifest = {"version": __version__, "master_seed": cfg.master_seed, "runs": cfg.runs,
                "strategies": cfg.strategies, "validation_fraction": cfg.validation_fraction, "problems": []}
    for entry in cfg.problems:
        pdir = out / entry["name"]
        data_seed = int(entry.get("seed", cfg.master_seed))
        if not (resume and (pdir / "train.csv").exists() and (pdir / "test.csv").exists()):
            materialize(entry, data_seed, pdir)
        resolved = {"entry": entry, "data_seed": data_seed, "gp": {}}
        for strategy in cfg.strategies:
            resolved["gp"][strategy] = asdict(replace(cfg.gp_config(entry, strategy, cfg.master_seed), seed=None))
            for k in range(cfg.runs):
                if resume and (pdir / strategy / f"run_{k}.json").exists():
                    continue
                gp = asdict(cfg.gp_config(entry, strategy, cfg.master_seed + k))
                tasks.append({"problem": entry["name"], "problem_dir": str(pdir), "strategy": strategy,
                              "run": k, "gp": gp, "validation_fraction": cfg.validation_fraction})
        manifest["problems"].append(resolved)
    _write_json(out / "manifest.json", manifest)

    workers = max(1, parallelism or cfg.parallelism)
    failures = 0
    if workers == 1:
        results = map(_run_one, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_run_one, tasks)
    for name, strategy, k, err in results:
        if err:
            failures += 1
            log.error("run %s/%s/%d failed:\n%s", name, strategy, k, err)
        else:
            log.info("finished %s/%s/run_%d", name, strategy, k)
    if workers > 1:
        pool.shutdown()
    return failures


def _write_json(path: Path, data) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


# ---------------------------------------------------------------- analysis


def _num(v: float) -> str:
    return "nan" if isinstance(v, float) and math.isnan(v) else repr(float(v))


def _run_files(directory: Path) -> list[Path]:
    files = [p for p in directory.glob("run_*.json") if p.stem[4:].isdigit()]
    return sorted(files, key=lambda p: int(p.stem[4:]))


def collect(results_dir: Path) -> tuple[stats.ResultTable, dict]:
    """Gather final test MSEs, plus per-cell inclusion logs and training ids."""
    manifest_path = results_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        problems = [p["entry"]["name"] for p in manifest["problems"]]
        strategies = list(manifest["strategies"])
    else:
        problems = sorted(p.name for p in results_dir.iterdir() if (p / "train.csv").exists())
        strategies = sorted({d.name for p in problems for d in (results_dir / p).iterdir() if d.is_dir()})
    table = stats.ResultTable(list(problems), list(strategies))
    logs = {}
    for p in problems:
        for s in strategies:
            cell = results_dir / p / s
            runs = _run_files(cell) if cell.is_dir() else []
            for path in runs:
                record = RunRecord.from_dict(json.loads(path.read_text(encoding="utf-8")))
                table.add(p, s, record.test_mse)
                logs.setdefault((p, s), []).append((record.subsets, record.train_case_ids))
    return table, logs


def analyze(results_dir: Path, out: Path | None = None) -> Path:
    out = out or results_dir / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    table, logs = collect(results_dir)
    meds = table.medians()

    lines = ["problem," + ",".join(table.strategies)]
    for p in table.problems:
        lines.append(p + "," + ",".join(_num(meds[(p, s)]) if (p, s) in meds else "" for s in table.strategies))
    (out / "medians.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    sig = stats.significance(table)
    lines = ["problem,pair,U,p,significant@0.05"]
    lines += [f"{r['problem']},{r['a']} vs {r['b']},{_num(r['U'])},{_num(r['p'])},{str(r['significant']).lower()}" for r in sig]
    (out / "significance.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    ranks = table.ranks()
    lines = ["problem," + ",".join(table.strategies)]
    for p in table.problems:
        if p in ranks:
            lines.append(p + "," + ",".join(_num(ranks[p][s]) for s in table.strategies))
    mean_rank = stats.mean_ranking(table) if ranks else {}
    if mean_rank:
        lines.append("mean_ranking," + ",".join(_num(mean_rank[s]) for s in table.strategies))
    (out / "rankings.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    for (p, s), runs in sorted(logs.items()):
        ds = load_csv(results_dir / p / "train.csv", "y", "case_id")
        freq = stats.inclusion_frequency([r[0] for r in runs], ds.case_ids, [r[1] for r in runs])
        flags = ds.outlier_flags if ds.outlier_flags is not None else np.zeros(len(ds), dtype=bool)
        rows = ["case_id," + ",".join(ds.feature_names) + ",y,outlier_flag,frequency"]
        for i, cid in enumerate(ds.case_ids):
            cells = [str(int(cid)), *(_num(v) for v in ds.X[i]), _num(ds.y[i]), str(int(flags[i])), _num(freq[i])]
            rows.append(",".join(cells))
        (out / f"frequency_{p}_{s}.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    (out / "summary.md").write_text(summary_markdown(table, sig, mean_rank), encoding="utf-8")
    return out


def summary_markdown(table: stats.ResultTable, sig: list[dict], mean_rank: dict) -> str:
    meds = table.medians()
    starred = {
        r["problem"]
        for r in sig
        if {r["a"], r["b"]} == {"IDS", "ROIDS"} and r["significant"]
    }
    lines = [
        "Median test MSE per problem and strategy. Bold marks the best median;",
        "an asterisk marks a significant ROIDS vs IDS difference (Mann-Whitney U, p < 0.05).",
        "",
        "| Problem | " + " | ".join(table.strategies) + " |",
        "|---|" + "---:|" * len(table.strategies),
    ]
    for p in table.problems:
        present = [meds[(p, s)] for s in table.strategies if (p, s) in meds]
        best = min(present) if present else None
        cells = []
        for s in table.strategies:
            if (p, s) not in meds:
                cells.append("n/a")
                continue
            text = f"{meds[(p, s)]:.3f}"
            if meds[(p, s)] == best:
                text = f"**{text}**"
            if s == "ROIDS" and p in starred:
                # escaped so the marker is not parsed as emphasis
                text = "\\*" + text
            cells.append(text)
        lines.append(f"| {p} | " + " | ".join(cells) + " |")
    if mean_rank:
        lines.append("| Mean Ranking | " + " | ".join(f"{mean_rank[s]:.2f}" for s in table.strategies) + " |")
    missing = [f"{p}/{s}" for p in table.problems for s in table.strategies if (p, s) not in meds]
    if missing:
        lines += ["", "Empty cells: " + ", ".join(missing)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    entry = {"generator": args.generator, "outliers": args.outliers}
    if args.generator == "nguyen6":
        entry["variant"] = args.variant
        if args.n is not None:
            entry["n"] = args.n
    else:
        if args.n is not None:
            entry["n_train"] = args.n
        if args.noise:
            entry["noise"] = args.noise
    out = Path(args.out) if args.out else default_out() / default_problem_name(entry)
    materialize(entry, args.seed, out)
    print(out)
    return EXIT_OK


def cmd_run(args) -> int:
    data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        data["master_seed"] = args.seed
    if args.validate_elite_only:
        data.setdefault("gp", {})["validate_elite_only"] = True
    cfg = ExperimentConfig.from_dict(data)
    out = Path(args.out) if args.out else Path(os.environ["ROIDS_OUT"]) if "ROIDS_OUT" in os.environ \
        else Path(cfg.out or "out")
    started = time.perf_counter()
    failed = run_experiment(cfg, out, resume=args.resume, parallelism=args.parallelism)
    log.info("done in %.1fs, %d failed run(s)", time.perf_counter() - started, failed)
    return EXIT_RUN_FAILED if failed else EXIT_OK


def cmd_analyze(args) -> int:
    results = Path(args.results_dir)
    if not results.is_dir():
        raise ExperimentConfigError(f"{results} is not a directory")
    print(analyze(results, Path(args.out) if args.out else None))
    return EXIT_OK


def cmd_lof(args) -> int:
    ds = load_csv(args.input, args.target, args.id_column)
    kept, scores = filter_outliers(ds, LofParams(args.k, args.threshold, args.include_target), return_scores=True)
    out = Path(args.out)
    write_csv(kept, out, target_name=args.target)
    removed = sorted(set(ds.case_ids.tolist()) - set(kept.case_ids.tolist()))
    report = {
        "input": str(args.input),
        "k": args.k,
        "threshold": args.threshold,
        "include_target": args.include_target,
        "removed_case_ids": removed,
        "scores": {str(int(c)): float(s) for c, s in zip(ds.case_ids, scores)},
    }
    _write_json(out.with_name(out.stem + "_lof.json"), report)
    print(f"removed {len(removed)} of {len(ds)} cases")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roids", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic benchmark (train.csv, test.csv + sidecars)")
    p.add_argument("generator", choices=GENERATORS)
    p.add_argument("--variant", choices=("even", "uneven"), default="even")
    p.add_argument("--outliers", action="store_true")
    p.add_argument("--n", type=int, default=None, help="training cases")
    p.add_argument("--noise", type=float, default=0.0, help="Friedman observation noise (std)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="run an experiment described by a JSON config")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--resume", action="store_true", help="skip runs whose record already exists")
    p.add_argument("--parallelism", type=int, default=None)
    p.add_argument("--validate-elite-only", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="medians, U tests, rankings and inclusion frequencies")
    p.add_argument("results_dir")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("lof", help="drop LOF outliers from a CSV")
    p.add_argument("input")
    p.add_argument("--target", default="y")
    p.add_argument("--id-column", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--threshold", type=float, default=1.5)
    p.add_argument("--include-target", action="store_true")
    p.set_defaults(func=cmd_lof)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ExperimentConfigError, ConfigError, DatasetError, DownsampleConfigError, LofError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
