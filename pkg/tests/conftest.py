import os
from pathlib import Path

import numpy as np
import pytest

from tempens.data import Dataset, MissingDataset, dataset_files

REPO = Path(__file__).resolve().parents[1]
DATA_DIR = Path(os.environ.get("TEMPENS_DATA_DIR", REPO / "data"))


def have_dataset(name: str) -> bool:
    try:
        dataset_files(DATA_DIR, name)
    except MissingDataset:
        return False
    return True


@pytest.fixture(scope="session")
def data_dir():
    return DATA_DIR


@pytest.fixture
def needs_mnist():
    if not have_dataset("mnist"):
        pytest.skip(f"MNIST IDX files not found under {DATA_DIR}")


def toy_dataset(n_per_class=6, num_classes=10, seed=0, role="train"):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    images = rng.random((len(labels), 1, 28, 28))
    # class-dependent brightness so a classifier has something to find
    images += labels[:, None, None, None] / num_classes
    return Dataset(images=images, labels=labels, num_classes=num_classes, role=role)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    """Print and remember one acceptance verdict; fail the calling test when it did not pass."""
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    if not passed:
        pytest.fail(line, pytrace=False)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
