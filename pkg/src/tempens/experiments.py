"""Experiment grids over datasets, epoch budgets and labeled-seed sizes.

Every grid cell is a list of independent :func:`run_episode` calls summarized by
:func:`aggregate_episodes`; nothing else feeds the reported numbers.
"""
from __future__ import annotations

import functools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .data import (DATASETS, dataset_files, default_data_dir, file_checksum, load_split,
                   normalize_channelwise, stratified_subset)
from .knn import knn_accuracy
from .trainer import EpisodeResult, TrainConfig, aggregate_episodes, run_episode

log = logging.getLogger(__name__)

RQ1_EPOCHS = (100, 300, 500)
RQ2_SEED_SIZES = (100, 200, 300, 400, 500)
RQ2_EPOCHS = (300, 500)
RQ3_SEED_SIZE, RQ3_EPOCHS, RQ3_EPISODES = 300, 500, 10


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "mnist"
    data_dir: str = field(default_factory=lambda: str(default_data_dir()))
    train: TrainConfig = field(default_factory=TrainConfig)
    episodes: int = 3
    sampling_seeds: tuple | None = None
    root_seed: int = 0
    max_train_samples: int | None = 10000
    max_test_samples: int | None = 2000
    subset_seed: int = 0
    output_dir: str = "results"
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.train, dict):
            object.__setattr__(self, "train", TrainConfig(**self.train))
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}; choose from {DATASETS}")
        if self.sampling_seeds is not None:
            seeds = tuple(int(s) for s in self.sampling_seeds)
            object.__setattr__(self, "sampling_seeds", seeds)
            if len(seeds) != self.episodes:
                raise ValueError(f"{self.episodes} episodes but {len(seeds)} sampling seeds")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")

    def seeds(self) -> list[int]:
        """Explicit sampling seeds, or ``episodes`` distinct draws from ``root_seed``."""
        if self.sampling_seeds is not None:
            return list(self.sampling_seeds)
        rng = np.random.default_rng(self.root_seed)
        return [int(s) for s in rng.choice(1000, size=self.episodes, replace=False)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_dict()
        d["sampling_seeds"] = None if self.sampling_seeds is None else list(self.sampling_seeds)
        return d


@dataclass
class Cell:
    dataset: str
    epochs: int
    seed_size: int
    results: list  # EpisodeResult, one per episode

    def summary(self) -> dict:
        agg = aggregate_episodes(self.results)
        return {
            "dataset": self.dataset,
            "epochs": self.epochs,
            "seed_size": self.seed_size,
            "sampling_seeds": [r.sampling_seed for r in self.results],
            "rng_seeds": [r.rng_seed for r in self.results],
            "best_accuracy": [r.best_accuracy for r in self.results],
            "final_accuracy": [r.final_accuracy for r in self.results],
            "best_epoch": [r.best_epoch for r in self.results],
            "best_mean": agg["best_accuracy"][0],
            "best_std": agg["best_accuracy"][1],
            "final_mean": agg["final_accuracy"][0],
            "final_std": agg["final_accuracy"][1],
            "spread": max(r.best_accuracy for r in self.results) - min(r.best_accuracy for r in self.results),
        }


@dataclass
class ResultsTable:
    name: str
    cells: list = field(default_factory=list)

    def cell(self, dataset: str, epochs: int, seed_size: int) -> Cell:
        for c in self.cells:
            if (c.dataset, c.epochs, c.seed_size) == (dataset, epochs, seed_size):
                return c
        raise KeyError((dataset, epochs, seed_size))

    def rows(self) -> list[dict]:
        return [c.summary() for c in self.cells]

    def format(self) -> str:
        lines = [f"{self.name}",
                 f"{'dataset':<14}{'epochs':>7}{'seeds':>7}   {'best (mean ± std)':<22}{'final (mean ± std)':<22}"]
        for r in self.rows():
            lines.append(f"{r['dataset']:<14}{r['epochs']:>7}{r['seed_size']:>7}   "
                         f"{100 * r['best_mean']:6.2f} ± {100 * r['best_std']:<12.3f}"
                         f"{100 * r['final_mean']:6.2f} ± {100 * r['final_std']:.3f}")
        return "\n".join(lines)


@functools.lru_cache(maxsize=4)
def prepare_data(dataset: str, data_dir: str, max_train: int | None, max_test: int | None, subset_seed: int = 0):
    """Load, subsample (class-stratified) and normalize one dataset with train statistics."""
    train = stratified_subset(load_split(data_dir, dataset, "train"), max_train, subset_seed)
    test = stratified_subset(load_split(data_dir, dataset, "test"), max_test, subset_seed + 1)
    train, (test,), _ = normalize_channelwise(train, [test])
    return train, test


def dataset_checksums(data_dir, dataset: str) -> dict:
    return {f"{dataset}/{p.name}": file_checksum(p) for p in dataset_files(data_dir, dataset)}


def _data_for(exp: ExperimentConfig, dataset: str):
    return prepare_data(dataset, str(exp.data_dir), exp.max_train_samples, exp.max_test_samples, exp.subset_seed)


def _episode_job(exp: ExperimentConfig, dataset: str, cfg: TrainConfig, sampling_seed: int, selection=None):
    train, test = _data_for(exp, dataset)
    with threadpool_limits(limits=1):
        return run_episode(cfg, train, test, sampling_seed, rng_seed=sampling_seed, selection=selection)


def run_cell(exp: ExperimentConfig, dataset: str, epochs: int, seed_size: int, cfg: TrainConfig | None = None) -> Cell:
    cfg = replace(cfg or exp.train, epochs=epochs, seed_size=seed_size)
    seeds = exp.seeds()
    _data_for(exp, dataset)  # fail fast on a missing dataset before spawning workers
    log.info("%s: %d epochs, %d seeds, %d episodes", dataset, epochs, seed_size, len(seeds))
    if exp.threads > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=exp.threads) as pool:
            futures = [pool.submit(_episode_job, exp, dataset, cfg, s) for s in seeds]
            results = [f.result() for f in futures]
    else:
        results = [_episode_job(exp, dataset, cfg, s) for s in seeds]
    for r in results:
        log.info("  seed_%d: best %.4f final %.4f", r.sampling_seed, r.best_accuracy, r.final_accuracy)
    return Cell(dataset, epochs, seed_size, results)


def run_rq1(exp: ExperimentConfig, datasets=DATASETS, epoch_grid=RQ1_EPOCHS, seed_size: int = 100) -> ResultsTable:
    table = ResultsTable("rq1: accuracy by dataset and training length")
    for name in datasets:
        for epochs in epoch_grid:
            table.cells.append(run_cell(exp, name, epochs, seed_size))
    return table


def run_rq2(exp: ExperimentConfig, datasets=DATASETS, seed_sizes=RQ2_SEED_SIZES, epoch_grid=RQ2_EPOCHS) -> ResultsTable:
    table = ResultsTable("rq2: accuracy by labeled seed size")
    for epochs in epoch_grid:
        for name in datasets:
            for size in seed_sizes:
                table.cells.append(run_cell(exp, name, epochs, size))
    return table


def run_rq3(exp: ExperimentConfig, datasets=DATASETS, seed_size: int = RQ3_SEED_SIZE,
            epochs: int = RQ3_EPOCHS) -> ResultsTable:
    """Many sampling seeds at a fixed seed size; the table keeps every selection for export."""
    table = ResultsTable("rq3: accuracy by seed type")
    for name in datasets:
        table.cells.append(run_cell(exp, name, epochs, seed_size))
    return table


def seed_report(table: ResultsTable) -> str:
    lines = []
    for cell in table.cells:
        lines.append(f"{cell.dataset} ({cell.seed_size} seeds, {cell.epochs} epochs)")
        ranked = sorted(cell.results, key=lambda r: r.best_accuracy, reverse=True)
        for r in ranked:
            lines.append(f"  seed_{r.sampling_seed:<6} best {100 * r.best_accuracy:6.2f}% (epoch {r.best_epoch})"
                         f"  final {100 * r.final_accuracy:6.2f}%")
        s = cell.summary()
        lines.append(f"  spread (max - min best): {100 * s['spread']:.2f} points; "
                     f"highest seed_{ranked[0].sampling_seed}, lowest seed_{ranked[-1].sampling_seed}")
    return "\n".join(lines)


def run_baseline_knn(exp: ExperimentConfig, k: int = 5) -> float:
    """k-NN on the same normalized (and subset-capped) pixels the networks see."""
    train, test = _data_for(exp, exp.dataset)
    return knn_accuracy(train.images, train.labels, test.images, test.labels, k, train.num_classes)


def supervised_config(cfg: TrainConfig) -> TrainConfig:
    """Same network and optimizer; only the loss flags change."""
    return replace(cfg, unsupervised=False, label_all=True)


def run_baseline_supervised(exp: ExperimentConfig, sampling_seed: int | None = None) -> EpisodeResult:
    seed = exp.seeds()[0] if sampling_seed is None else sampling_seed
    return _episode_job(exp, exp.dataset, supervised_config(exp.train), seed)
