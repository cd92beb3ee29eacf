"""Command-line runner for the experiment grids and baselines."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import DATA_DIR_ENV, DATASETS, default_data_dir
from .errors import MissingDataset
from .experiments import (RQ1_EPOCHS, RQ2_EPOCHS, RQ2_SEED_SIZES, RQ3_EPISODES, RQ3_EPOCHS, RQ3_SEED_SIZE,
                          Cell, ExperimentConfig, ResultsTable, dataset_checksums, prepare_data,
                          run_baseline_knn, run_cell, run_rq1, run_rq2, run_rq3, seed_report,
                          supervised_config)
from .export import cell_stem, export_results, read_manifest, read_selection, verify_manifest
from .losses import RampSchedule, combined_loss
from .nn import NetworkConfig, init_network
from .trainer import TrainConfig, run_episode

log = logging.getLogger("tempens")

KNN_LABEL = "k-NN (this artifact's configuration)"

# desk-scale defaults per command; --full-scale swaps in the published grids
DESK = {
    "rq1": {"epochs": [20, 30], "seed_size": [100], "episodes": 3},
    "rq2": {"epochs": [30], "seed_size": list(RQ2_SEED_SIZES), "episodes": 3},
    "rq3": {"epochs": [30], "seed_size": [RQ3_SEED_SIZE], "episodes": RQ3_EPISODES},
    "train": {"epochs": [30], "seed_size": [100], "episodes": 1},
    "baseline-supervised": {"epochs": [30], "seed_size": [100], "episodes": 1},
    "baseline-knn": {"epochs": [30], "seed_size": [100], "episodes": 1},
}
FULL = {
    "rq1": {"epochs": list(RQ1_EPOCHS), "seed_size": [100], "episodes": 5},
    "rq2": {"epochs": list(RQ2_EPOCHS), "seed_size": list(RQ2_SEED_SIZES), "episodes": 5},
    "rq3": {"epochs": [RQ3_EPOCHS], "seed_size": [RQ3_SEED_SIZE], "episodes": RQ3_EPISODES},
    "train": {"epochs": [300], "seed_size": [100], "episodes": 1},
    "baseline-supervised": {"epochs": [30], "seed_size": [100], "episodes": 1},
    "baseline-knn": {"epochs": [30], "seed_size": [100], "episodes": 1},
}


def _cap(text: str):
    value = int(text)
    return None if value <= 0 else value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("experiment")
    g.add_argument("--dataset", nargs="+", choices=DATASETS, help="default: all three (mnist for single runs)")
    g.add_argument("--data-dir", default=None, help=f"root holding <dataset>/*-ubyte[.gz]; default ${DATA_DIR_ENV} or ./data")
    g.add_argument("--seed-size", nargs="+", type=int, help="labeled samples (a list for rq2)")
    g.add_argument("--epochs", nargs="+", type=int, help="epoch budget (a list for rq1/rq2)")
    g.add_argument("--episodes", type=int)
    g.add_argument("--sampling-seeds", nargs="+", type=int, help="explicit seeds; sets --episodes")
    g.add_argument("--root-seed", type=int, default=0, help="derives sampling seeds when none are given")
    g.add_argument("--unbalanced", action="store_true", help="sample seeds without per-class balancing")
    g.add_argument("--full-scale", action="store_true", help="published grids, no subset caps (hours to days)")
    h = common.add_argument_group("hyperparameters")
    h.add_argument("--alpha", type=float, default=0.6)
    h.add_argument("--lr", type=float, default=0.002)
    h.add_argument("--beta2", type=float, default=0.99)
    h.add_argument("--batch-size", type=int, default=100)
    h.add_argument("--ramp-length", type=int, default=80)
    h.add_argument("--w-max", type=float, default=30.0)
    h.add_argument("--noise-std", type=float, default=0.15)
    h.add_argument("--dropout", type=float, default=0.5)
    h.add_argument("--ensemble-source", choices=("noisy", "clean"), default="noisy")
    r = common.add_argument_group("runtime")
    r.add_argument("--subset-train", type=_cap, default=10000, help="stratified train cap; 0 = all")
    r.add_argument("--subset-test", type=_cap, default=2000, help="stratified test cap; 0 = all")
    r.add_argument("--threads", type=int, default=1, help="episodes run in parallel processes")
    r.add_argument("--precision", choices=("float32", "float64"), default="float32")
    r.add_argument("--out", default="results")
    r.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tempens", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("rq1", parents=[common], help="datasets x epoch budgets at 100 seeds")
    sub.add_parser("rq2", parents=[common], help="datasets x seed sizes")
    sub.add_parser("rq3", parents=[common], help="many sampling seeds at a fixed seed size")
    knn = sub.add_parser("baseline-knn", parents=[common], help="k-nearest-neighbour accuracy")
    knn.add_argument("--k", type=int, default=5)
    sub.add_parser("baseline-supervised", parents=[common], help="same network, all labels, no consistency term")
    train = sub.add_parser("train", parents=[common], help="a single episode")
    train.add_argument("--seed-file", help="replay an exported labeled selection")
    train.add_argument("--checkpoint", help="also save the final model here (.npz)")
    grad = sub.add_parser("check-gradients", help="finite-difference check of every layer")
    grad.add_argument("--batch", type=int, default=4)
    grad.add_argument("--step", type=float, default=1e-5)
    grad.add_argument("--tolerance", type=float, default=1e-4)
    grad.add_argument("--max-entries", type=int, default=300, help="entries probed per tensor; 0 = all")
    grad.add_argument("--seed", type=int, default=0)
    replay = sub.add_parser("replay", help="rerun the run described by a manifest")
    replay.add_argument("manifest")
    replay.add_argument("--data-dir", default=None)
    replay.add_argument("--out", required=True)
    verify = sub.add_parser("verify-manifest", help="check dataset files against a manifest")
    verify.add_argument("manifest")
    verify.add_argument("--data-dir", default=None)
    return parser


def grid_from_args(args) -> dict:
    base = (FULL if args.full_scale else DESK)[args.command]
    multi = args.command in ("rq1", "rq2", "rq3")
    datasets = args.dataset or (list(DATASETS) if multi else ["mnist"])
    if not multi and len(datasets) > 1:
        raise SystemExit(f"{args.command} takes a single --dataset")
    epochs = args.epochs or base["epochs"]
    sizes = args.seed_size or base["seed_size"]
    if args.command in ("rq3", "train", "baseline-supervised", "baseline-knn") and (len(epochs) > 1 or len(sizes) > 1):
        raise SystemExit(f"{args.command} takes a single --epochs and --seed-size")
    grid = {"datasets": datasets, "epochs": epochs, "seed_sizes": sizes}
    if args.command == "baseline-knn":
        grid["k"] = args.k
    if args.command == "train" and args.seed_file:
        grid["seed_file"] = str(Path(args.seed_file).resolve())
    return grid


def experiment_from_args(args, grid) -> ExperimentConfig:
    base = (FULL if args.full_scale else DESK)[args.command]
    net = NetworkConfig(dropout_rate=args.dropout)
    train = TrainConfig(network=net, epochs=grid["epochs"][0], batch_size=args.batch_size, learning_rate=args.lr,
                        beta2=args.beta2, alpha=args.alpha, noise_std=args.noise_std, ramp_length=args.ramp_length,
                        max_weight=args.w_max, seed_size=grid["seed_sizes"][0], balanced=not args.unbalanced,
                        ensemble_source=args.ensemble_source, precision=args.precision)
    seeds = tuple(args.sampling_seeds) if args.sampling_seeds else None
    episodes = len(seeds) if seeds else (args.episodes or base["episodes"])
    caps = (None, None) if args.full_scale else (args.subset_train, args.subset_test)
    return ExperimentConfig(dataset=grid["datasets"][0], data_dir=str(Path(args.data_dir or default_data_dir()).resolve()),
                            train=train, episodes=episodes, sampling_seeds=seeds, root_seed=args.root_seed,
                            max_train_samples=caps[0], max_test_samples=caps[1], output_dir=args.out,
                            threads=args.threads)


def execute(command: str, exp: ExperimentConfig, grid: dict, out_dir, checkpoint=None) -> list[Path]:
    """Run one command and export its outputs; shared by the CLI and ``replay``."""
    datasets = grid["datasets"]
    table, extra, report, export_seeds = None, {}, None, False
    if command == "rq1":
        table = run_rq1(exp, datasets, grid["epochs"], grid["seed_sizes"][0])
    elif command == "rq2":
        table = run_rq2(exp, datasets, grid["seed_sizes"], grid["epochs"])
    elif command == "rq3":
        table = run_rq3(exp, datasets, grid["seed_sizes"][0], grid["epochs"][0])
        report = seed_report(table)
        export_seeds = True
    elif command == "baseline-knn":
        acc = run_baseline_knn(exp, grid["k"])
        extra = {"baseline": KNN_LABEL, "dataset": exp.dataset, "k": grid["k"], "accuracy": acc,
                 "train_samples": exp.max_train_samples, "test_samples": exp.max_test_samples}
        report = f"{KNN_LABEL} on {exp.dataset}, k={grid['k']}: {100 * acc:.2f}%"
    elif command == "baseline-supervised":
        train, _ = prepare_data(exp.dataset, exp.data_dir, exp.max_train_samples, exp.max_test_samples, exp.subset_seed)
        cfg = supervised_config(exp.train)
        table = ResultsTable("baseline: fully supervised network")
        table.cells.append(run_cell(exp, exp.dataset, grid["epochs"][0], len(train), cfg))
    elif command == "train":
        table = ResultsTable("single episode")
        if "seed_file" in grid:
            table.cells.append(_replay_selection(exp, grid, checkpoint))
        else:
            table.cells.append(run_cell(exp, exp.dataset, grid["epochs"][0], grid["seed_sizes"][0]))
            if checkpoint:
                _save_final(exp, table.cells[0], checkpoint)
        export_seeds = True
    else:
        raise ValueError(f"unknown command {command!r}")
    if report is None and table is not None:
        report = table.format()
    manifest = {
        "command": command,
        "grid": grid,
        "experiment": {k: v for k, v in exp.to_dict().items() if k != "output_dir"},
        "config_fingerprint": exp.train.fingerprint(),
        "datasets": {k: v for name in datasets for k, v in dataset_checksums(exp.data_dir, name).items()},
        "episodes": [] if table is None else [
            {"cell": cell_stem(c), "sampling_seed": r.sampling_seed, "rng_seed": r.rng_seed, "fingerprint": r.fingerprint}
            for c in table.cells for r in c.results],
    }
    print(report)
    return export_results(out_dir, table, manifest, extra, report, export_seeds)


def _replay_selection(exp, grid, checkpoint) -> Cell:
    selection = read_selection(grid["seed_file"])
    train, test = prepare_data(exp.dataset, exp.data_dir, exp.max_train_samples, exp.max_test_samples, exp.subset_seed)
    cfg = replace(exp.train, epochs=grid["epochs"][0], seed_size=selection.seed_size, balanced=selection.balanced)
    result = run_episode(cfg, train, test, selection.sampling_seed, selection.sampling_seed, selection=selection)
    cell = Cell(exp.dataset, cfg.epochs, selection.seed_size, [result])
    if checkpoint:
        _save_final(exp, cell, checkpoint)
    return cell


def _save_final(exp, cell, path):
    from .checkpoint import save_checkpoint
    r = cell.results[0]
    cfg = replace(exp.train, epochs=cell.epochs, seed_size=cell.seed_size)
    save_checkpoint(path, cfg, r.params, r.optimizer, cell.epochs)


def check_gradients(args) -> int:
    from .gradcheck import finite_diff_check
    cfg = NetworkConfig()
    rng = np.random.default_rng(args.seed)
    params = init_network(cfg, rng, np.float64)
    batch = rng.normal(size=(args.batch, *cfg.input_shape))
    labels = rng.integers(0, cfg.num_classes, size=args.batch)
    mask = rng.random(args.batch) < 0.5
    mask[0] = True
    targets = rng.dirichlet(np.ones(cfg.num_classes), size=args.batch)
    schedule = RampSchedule(30.0, 80, 0.5)

    def loss(z):
        parts, grad = combined_loss(z, labels, mask, targets, 40, schedule)
        return parts.total, grad

    report = finite_diff_check(params, batch, loss, cfg, step=args.step, tolerance=args.tolerance,
                               max_entries=args.max_entries or None, rng_seed=args.seed)
    print("\n".join(report.lines()))
    print("all layers pass" if report.passed else f"FAILED: {', '.join(report.failed())}")
    return 0 if report.passed else 1


def replay(args) -> int:
    manifest = read_manifest(args.manifest)
    experiment = dict(manifest["experiment"])
    if args.data_dir:
        experiment["data_dir"] = str(Path(args.data_dir).resolve())
    exp = ExperimentConfig(**experiment)
    bad = verify_manifest(manifest, exp.data_dir)
    if bad:
        print(f"dataset files differ from the manifest: {', '.join(bad)}", file=sys.stderr)
        return 2
    execute(manifest["command"], exp, manifest["grid"], args.out)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "check-gradients":
            return check_gradients(args)
        if args.command == "replay":
            return replay(args)
        if args.command == "verify-manifest":
            manifest = read_manifest(args.manifest)
            data_dir = args.data_dir or manifest["experiment"]["data_dir"]
            bad = verify_manifest(manifest, data_dir)
            for rel in bad:
                print(f"MISMATCH {rel}")
            print("ok" if not bad else f"{len(bad)} file(s) differ")
            return 0 if not bad else 1
        grid = grid_from_args(args)
        exp = experiment_from_args(args, grid)
        execute(args.command, exp, grid, args.out, getattr(args, "checkpoint", None))
    except MissingDataset as exc:
        print(f"missing dataset: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
