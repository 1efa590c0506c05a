"""Experiment orchestration, metrics tables and CSV/JSON-lines output."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..algorithms import (
    FIELDS,
    MarinaPpConfig,
    MomentumHeuristicConfig,
    RoundMetrics,
    RunResult,
    World,
    run_marina_pp,
    run_momentum_heuristic,
    run_reference_gd,
)
from ..problem import (
    Dataset,
    load_libsvm,
    make_synthetic,
    measure_smoothness,
    reference_solution,
    split_clients,
)
from .config import ExperimentConfig

logger = logging.getLogger(__name__)

CSV_FIELDS = ("seed",) + FIELDS


@dataclass(frozen=True)
class Problem:
    world: World
    x_star: np.ndarray
    f_star: float
    L: float


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    p = cfg.problem
    path = cfg.dataset_path()
    if path is None:
        return make_synthetic(p.n_samples, p.n_features, p.data_seed, flip=p.flip)
    ds = load_libsvm(path, n_features=None)
    if p.max_rows is not None:
        ds = ds.subset(np.arange(min(p.max_rows, ds.m)))
    return ds


def build_problem(cfg: ExperimentConfig) -> Problem:
    """World plus its optimum; ``f*`` is computed here once and shared by every run."""
    p, fed = cfg.problem, cfg.federation
    if p.objective == "quadratic":
        world = World.quadratic(np.diag(p.eigenvalues), p.b, fed.n, fed.byzantine, cfg.attack_spec())
    else:
        ds = load_dataset(cfg)
        asg = split_clients(ds, fed.n, fed.byzantine, p.split, np.random.default_rng(p.data_seed))
        world = World.from_assignment(asg, p.eta, cfg.attack_spec())
    x_star, f_star = reference_solution(world.f, tol=cfg.run.solver_tol)
    world.f_star = f_star
    return Problem(world, x_star, f_star, measure_smoothness(world.f).L)


def marina_config(cfg: ExperimentConfig, world: World, gamma: float | None = None, alpha: float | None = None) -> MarinaPpConfig:
    a = cfg.algorithm
    C, Chat = cfg.cohort_sizes()
    m = world.objectives[world.good[0]].n_samples
    p = min(1.0, a.b / m) if a.p == "auto" else float(a.p)
    return MarinaPpConfig(
        gamma=a.gamma if gamma is None else gamma,
        b=a.b,
        p=p,
        alpha=cfg.alpha_value() if alpha is None else alpha,
        C=C,
        Chat=Chat,
        K=a.rounds,
        delta=a.delta,
        aggregator=cfg.aggregator_spec(),
        compressor=cfg.compressor_spec(world.dim),
        record_time=cfg.run.record_time,
    )


def momentum_config(cfg: ExperimentConfig, gamma: float | None = None, alpha: float | None = None) -> MomentumHeuristicConfig:
    a = cfg.algorithm
    C, _ = cfg.cohort_sizes()
    return MomentumHeuristicConfig(
        gamma=a.gamma if gamma is None else gamma,
        beta=a.beta,
        alpha=cfg.alpha_value() if alpha is None else alpha,
        C=C,
        b=a.b,
        K=a.rounds,
        delta=a.delta,
        aggregator=cfg.aggregator_spec(),
        record_time=cfg.run.record_time,
    )


def run_one(cfg: ExperimentConfig, problem: Problem, seed: int, gamma: float | None = None, alpha: float | None = None) -> RunResult:
    a = cfg.algorithm
    world = problem.world
    if a.method == "marina_pp":
        return run_marina_pp(marina_config(cfg, world, gamma, alpha), world, seed, max_epochs=a.max_epochs)
    if a.method == "momentum_heuristic":
        return run_momentum_heuristic(momentum_config(cfg, gamma, alpha), world, seed, max_epochs=a.max_epochs)
    return run_reference_gd(world, a.gamma if gamma is None else gamma, a.rounds, max_epochs=a.max_epochs)


# ---------------------------------------------------------------------------
# Tables


@dataclass
class MetricsTable:
    rows: list[tuple[int, RoundMetrics]] = field(default_factory=list)

    def add_run(self, seed: int, result: RunResult) -> None:
        self.rows.append((seed, result.initial))
        self.rows.extend((seed, m) for m in result.trajectory)

    def seeds(self) -> list[int]:
        return sorted({s for s, _ in self.rows})

    def by_seed(self, seed: int) -> list[RoundMetrics]:
        return [m for s, m in self.rows if s == seed]

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class SeedSummary:
    final_gap_mean: float
    final_gap_stderr: float
    final_gaps: tuple[float, ...]
    curve: tuple[tuple[int, float, float, int], ...]  # (k, mean gap, stderr, seeds present)


def _mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def summarize(table: MetricsTable) -> SeedSummary:
    """Mean and standard error of the optimality gap across seeds, per round and at the end."""
    finals = []
    per_k: dict[int, list[float]] = {}
    for seed in table.seeds():
        ms = table.by_seed(seed)
        if ms:
            finals.append(ms[-1].f_gap)
        for m in ms:
            per_k.setdefault(m.k, []).append(m.f_gap)
    mean, se = _mean_stderr(finals)
    curve = tuple((k, *_mean_stderr(v), len(v)) for k, v in sorted(per_k.items()))
    return SeedSummary(mean, se, tuple(finals), curve)


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def emit_csv(table: MetricsTable, path: str | os.PathLike) -> None:
    """Header plus one row per (seed, round); floats with 17 significant digits, LF endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for seed, m in table.rows:
            w.writerow([seed] + [_fmt(getattr(m, f)) for f in FIELDS])


_FIELD_TYPES = {f.name: f.type for f in fields(RoundMetrics)}


def read_csv(path: str | os.PathLike) -> MetricsTable:
    table = MetricsTable()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        for row in reader:
            vals = {k: (float(row[k]) if _FIELD_TYPES[k] == "float" else int(row[k])) for k in FIELDS}
            table.rows.append((int(row["seed"]), RoundMetrics(**vals)))
    return table


# ---------------------------------------------------------------------------
# Orchestration


@dataclass
class ExperimentResult:
    table: MetricsTable
    summary: SeedSummary
    problem: Problem
    csv_path: Path | None = None


def write_summary_line(path: Path, record: dict) -> None:
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def run_experiment(cfg: ExperimentConfig, problem: Problem | None = None, write: bool = True) -> ExperimentResult:
    """Run the configured method for every seed; write CSV + JSON-lines summary."""
    cfg.validate()
    problem = problem or build_problem(cfg)
    table = MetricsTable()
    results = {}
    for seed in cfg.run.seeds:
        res = run_one(cfg, problem, seed)
        results[seed] = res
        table.add_run(seed, res)
        last = res.trajectory[-1] if res.trajectory else res.initial
        logger.info("seed %d: %d rounds, final gap %.3e", seed, len(res.trajectory), last.f_gap)
    summary = summarize(table)
    csv_path = None
    if write:
        out = cfg.output_dir()
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{cfg.run.name}.csv"
        emit_csv(table, csv_path)
        h = cfg.config_hash()
        for seed, res in results.items():
            last = res.trajectory[-1] if res.trajectory else res.initial
            write_summary_line(out / f"{cfg.run.name}.jsonl", {
                "config_hash": h,
                "seed": seed,
                "method": cfg.algorithm.method,
                "rounds": len(res.trajectory),
                "epochs": last.epochs,
                "initial_gap": res.initial.f_gap,
                "final_gap": last.f_gap,
            })
    return ExperimentResult(table, summary, problem, csv_path)


@dataclass(frozen=True)
class SweepEntry:
    gamma: float
    alpha: float
    summary: SeedSummary

    @property
    def median_final(self) -> float:
        return float(np.median(self.summary.final_gaps))


def run_sweep(cfg: ExperimentConfig, problem: Problem | None = None, gammas: Iterable[float] | None = None, alphas: Iterable[float] | None = None) -> tuple[SweepEntry, list[SweepEntry]]:
    """Grid over stepsize and clipping multiplier; best = smallest median final gap."""
    from .config import parse_alpha

    cfg.validate()
    problem = problem or build_problem(cfg)
    gammas = list(cfg.sweep.gamma if gammas is None else gammas)
    alphas = [parse_alpha(a) for a in (cfg.sweep.alpha if alphas is None else alphas)]
    entries = []
    for alpha in alphas:
        for gamma in gammas:
            table = MetricsTable()
            for seed in cfg.run.seeds:
                table.add_run(seed, run_one(cfg, problem, seed, gamma=gamma, alpha=alpha))
            entries.append(SweepEntry(gamma, alpha, summarize(table)))
    best = min(entries, key=lambda e: (_nan_last(e.median_final), -e.gamma))
    return best, entries


def _nan_last(v: float) -> float:
    return math.inf if math.isnan(v) else v
