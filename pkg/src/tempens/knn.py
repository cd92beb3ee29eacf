"""k-nearest-neighbour baseline on raw (normalized) pixels."""
from __future__ import annotations

import numpy as np


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distances between rows of ``a`` and rows of ``b``."""
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.sqrt(np.maximum(sq, 0.0))


def vote(neighbor_labels: np.ndarray, neighbor_dists: np.ndarray, num_classes: int) -> int:
    """Majority class; ties go to the smaller mean distance, then the lower class index."""
    counts = np.bincount(neighbor_labels, minlength=num_classes)
    tied = np.flatnonzero(counts == counts.max())
    if len(tied) == 1:
        return int(tied[0])
    means = [neighbor_dists[neighbor_labels == c].mean() for c in tied]
    return int(tied[int(np.argmin(means))])  # argmin keeps the lowest class on equal means


def knn_predict(train_x, train_y, test_x, k: int = 5, num_classes: int = 10, chunk: int = 500) -> np.ndarray:
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(train_x):
        raise ValueError(f"k={k} exceeds {len(train_x)} training samples")
    train_x = np.asarray(train_x, dtype=np.float64).reshape(len(train_x), -1)
    test_x = np.asarray(test_x, dtype=np.float64).reshape(len(test_x), -1)
    preds = np.empty(len(test_x), dtype=np.int64)
    for start in range(0, len(test_x), chunk):
        d = pairwise_distances(test_x[start:start + chunk], train_x)
        # stable sort: equidistant neighbours are taken in training-set order
        nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
        for row, idx in enumerate(nearest):
            preds[start + row] = vote(train_y[idx], d[row, idx], num_classes)
    return preds


def knn_accuracy(train_x, train_y, test_x, test_y, k: int = 5, num_classes: int = 10) -> float:
    return float(np.mean(knn_predict(train_x, train_y, test_x, k, num_classes) == np.asarray(test_y)))
