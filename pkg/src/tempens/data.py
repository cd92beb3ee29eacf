"""Datasets: loading from IDX files, channel normalization, labeled-seed sampling
and input noise."""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateStd,
    IndivisibleSeedSize,
    LabelOutOfRange,
    MissingDataset,
    SeedSizeTooLarge,
    SizeMismatch,
)
from .idx import RawIdxTensor, read_idx_file

DATASETS = ("mnist", "kmnist", "fashion-mnist")
DATA_DIR_ENV = "TEMPENS_DATA_DIR"
NUM_CLASSES = 10
IMAGE_SIDE = 28

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # [N, 1, 28, 28]
    labels: np.ndarray  # [N] int64
    num_classes: int = NUM_CLASSES
    role: str = "train"
    normalization_stats: tuple[float, float] | None = None

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise SizeMismatch(f"{len(self.images)} images vs {len(self.labels)} labels")
        if self.role not in ("train", "test"):
            raise ValueError(f"role must be 'train' or 'test', got {self.role!r}")

    def __len__(self):
        return len(self.labels)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return replace(self, images=self.images[indices], labels=self.labels[indices])


@dataclass(frozen=True)
class SeedSelection:
    labeled_indices: np.ndarray
    seed_size: int
    sampling_seed: int
    balanced: bool = True

    def __post_init__(self):
        idx = np.asarray(self.labeled_indices, dtype=np.int64)
        if len(idx) != self.seed_size:
            raise ValueError(f"{len(idx)} indices for seed size {self.seed_size}")
        if len(np.unique(idx)) != len(idx):
            raise ValueError("labeled indices must be distinct")
        object.__setattr__(self, "labeled_indices", np.sort(idx))

    def mask(self, n: int) -> np.ndarray:
        out = np.zeros(n, dtype=bool)
        out[self.labeled_indices] = True
        return out

    def to_dict(self) -> dict:
        return {
            "sampling_seed": int(self.sampling_seed),
            "seed_size": int(self.seed_size),
            "balanced": bool(self.balanced),
            "labeled_indices": [int(i) for i in self.labeled_indices],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SeedSelection":
        return cls(
            labeled_indices=np.asarray(d["labeled_indices"], dtype=np.int64),
            seed_size=int(d["seed_size"]),
            sampling_seed=int(d["sampling_seed"]),
            balanced=bool(d["balanced"]),
        )


@dataclass(frozen=True)
class AugmentationConfig:
    gaussian_std: float = 0.15

    def __post_init__(self):
        if not self.gaussian_std >= 0:
            raise ValueError(f"gaussian_std must be >= 0, got {self.gaussian_std}")


def load_dataset(image_tensor: RawIdxTensor, label_tensor: RawIdxTensor, role: str = "train",
                 num_classes: int = NUM_CLASSES) -> Dataset:
    """Scale pixel bytes to [0, 1] and pair them with labels. No normalization yet."""
    if len(image_tensor.dims) != 3 or image_tensor.dims[1:] != (IMAGE_SIDE, IMAGE_SIDE):
        raise ValueError(f"expected image dims [N, 28, 28], got {list(image_tensor.dims)}")
    if len(label_tensor.dims) != 1:
        raise ValueError(f"expected label dims [N], got {list(label_tensor.dims)}")
    if image_tensor.dims[0] != label_tensor.dims[0]:
        raise SizeMismatch(f"{image_tensor.dims[0]} images vs {label_tensor.dims[0]} labels")
    labels = label_tensor.to_numpy().astype(np.int64)
    if labels.size and labels.max() >= num_classes:
        raise LabelOutOfRange(f"label {labels.max()} >= {num_classes} classes")
    images = image_tensor.to_numpy().astype(np.float64) / 255.0
    images = images.reshape(-1, 1, IMAGE_SIDE, IMAGE_SIDE)
    return Dataset(images=images, labels=labels, num_classes=num_classes, role=role)


def normalize_channelwise(train: Dataset, others=(), eps: float = 1e-12):
    """Standardize every dataset with per-channel statistics of ``train``.

    Population std (divide by count). Returns ``(train, others, stats)`` where
    stats is ``(mean, std)`` arrays of shape [channels].
    """
    if train.role != "train":
        raise ValueError("normalization statistics must come from the training split")
    axes = (0, 2, 3)
    mean = train.images.mean(axis=axes)
    std = train.images.std(axis=axes)
    if np.any(std < eps):
        raise DegenerateStd(f"channel std {std} below {eps}; training images are constant")

    def apply(ds: Dataset) -> Dataset:
        x = (ds.images - mean[None, :, None, None]) / std[None, :, None, None]
        return replace(ds, images=x, normalization_stats=(float(mean[0]), float(std[0])))

    return apply(train), [apply(d) for d in others], (mean, std)


def sample_seeds(dataset: Dataset, seed_size: int, sampling_seed: int,
                 balanced: bool = True) -> SeedSelection:
    n, c = len(dataset), dataset.num_classes
    if seed_size < 1:
        raise ValueError("seed_size must be positive")
    if seed_size > n:
        raise SeedSizeTooLarge(f"seed size {seed_size} exceeds {n} training samples")
    rng = np.random.default_rng(sampling_seed)
    if balanced:
        if seed_size % c:
            raise IndivisibleSeedSize(f"{seed_size} labeled samples cannot be split evenly over {c} classes")
        per_class = seed_size // c
        chosen = []
        for k in range(c):
            pool = np.flatnonzero(dataset.labels == k)
            if len(pool) < per_class:
                raise SeedSizeTooLarge(f"class {k} has {len(pool)} samples, need {per_class}")
            chosen.append(rng.choice(pool, size=per_class, replace=False))
        indices = np.concatenate(chosen)
    else:
        indices = rng.choice(n, size=seed_size, replace=False)
    return SeedSelection(indices, seed_size, sampling_seed, balanced)


def augment_gaussian(batch: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.gaussian_std == 0:
        return batch.copy()
    noise = rng.normal(0.0, cfg.gaussian_std, size=batch.shape)
    return batch + noise.astype(batch.dtype, copy=False)


def stratified_subset(dataset: Dataset, max_samples: int | None, seed: int = 0) -> Dataset:
    """Class-proportional subsample of at most ``max_samples`` rows, order preserved."""
    n = len(dataset)
    if max_samples is None or max_samples >= n:
        return dataset
    rng = np.random.default_rng(seed)
    counts = np.bincount(dataset.labels, minlength=dataset.num_classes)
    quota = counts * max_samples / n
    take = np.floor(quota).astype(int)
    # largest remainders get the leftover slots
    leftover = max_samples - take.sum()
    order = np.argsort(-(quota - take), kind="stable")
    take[order[:leftover]] += 1
    keep = []
    for k in range(dataset.num_classes):
        pool = np.flatnonzero(dataset.labels == k)
        keep.append(rng.choice(pool, size=take[k], replace=False))
    return dataset.subset(np.sort(np.concatenate(keep)))


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def split_paths(data_dir, name: str, split: str) -> tuple[Path, Path]:
    """Locate the (images, labels) files for one split, preferring gzipped copies."""
    if name not in DATASETS:
        raise ValueError(f"unknown dataset {name!r}; choose from {DATASETS}")
    root = Path(data_dir) / name
    found = []
    for stem in SPLIT_FILES[split]:
        for candidate in (root / f"{stem}.gz", root / stem):
            if candidate.exists():
                found.append(candidate)
                break
        else:
            raise MissingDataset(f"{name}: no {stem}[.gz] under {root}")
    return found[0], found[1]


def dataset_files(data_dir, name: str) -> list[Path]:
    return [p for split in ("train", "test") for p in split_paths(data_dir, name, split)]


def load_split(data_dir, name: str, split: str) -> Dataset:
    images, labels = split_paths(data_dir, name, split)
    return load_dataset(read_idx_file(images), read_idx_file(labels), role=split)


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
