"""Writers for curve records, aggregate tables, seed selections and run manifests.

Output directory layout::

    curves/<dataset>_e<epochs>_s<seed_size>.csv   one row per (episode, epoch)
    results.json                                   aggregate table + per-episode values
    seeds/<dataset>_s<seed_size>_seed_<n>.json     labeled indices of each episode
    report.txt                                     human-readable table
    manifest.json                                  everything needed to replay the run

Nothing time- or host-dependent is written, so identical runs give identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from . import __version__
from .data import SeedSelection, file_checksum

CURVE_COLUMNS = ("epoch", "sup_loss", "unsup_loss", "w_t", "test_acc", "episode", "sampling_seed")
MANIFEST_VERSION = 1


def _dump_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def cell_stem(cell) -> str:
    return f"{cell.dataset}_e{cell.epochs}_s{cell.seed_size}"


def curve_rows(cell):
    for episode, result in enumerate(cell.results):
        for m in result.epochs:
            yield (m.epoch, repr(m.supervised_loss), repr(m.unsupervised_loss), repr(m.w_t),
                   repr(m.test_accuracy), episode, result.sampling_seed)


def write_curves(path: Path, cell) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_COLUMNS)
    writer.writerows(curve_rows(cell))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def read_curves(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_selection(path: Path, selection: SeedSelection) -> Path:
    return _dump_json(path, selection.to_dict())


def read_selection(path) -> SeedSelection:
    return SeedSelection.from_dict(json.loads(Path(path).read_text()))


def export_results(out_dir, table=None, manifest: dict | None = None, extra_results: dict | None = None,
                   report: str | None = None, export_seeds: bool = False) -> list[Path]:
    """Write everything for one run; returns the written paths in a fixed order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    results = {"library_version": __version__}
    if table is not None:
        results["table"] = table.name
        results["rows"] = table.rows()
        for cell in table.cells:
            written.append(write_curves(out / "curves" / f"{cell_stem(cell)}.csv", cell))
            if export_seeds:
                for r in cell.results:
                    name = f"{cell.dataset}_s{cell.seed_size}_seed_{r.sampling_seed}.json"
                    written.append(write_selection(out / "seeds" / name, r.selection))
    if extra_results:
        results.update(extra_results)
    written.append(_dump_json(out / "results.json", results))
    if report is not None:
        (out / "report.txt").write_text(report.rstrip("\n") + "\n")
        written.append(out / "report.txt")
    if manifest is not None:
        manifest = dict(manifest, manifest_version=MANIFEST_VERSION, library_version=__version__)
        manifest["outputs"] = {p.relative_to(out).as_posix(): file_checksum(p) for p in written}
        written.append(_dump_json(out / "manifest.json", manifest))
    return written


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def verify_manifest(manifest: dict, data_dir) -> list[str]:
    """Dataset files whose current checksum differs from (or is missing versus) the manifest."""
    bad = []
    for rel, expected in sorted(manifest.get("datasets", {}).items()):
        path = Path(data_dir) / rel
        if not path.exists() or file_checksum(path) != expected:
            bad.append(rel)
    return bad
