import numpy as np
import pytest

from tempens.knn import knn_accuracy, knn_predict, vote


def brute_force_knn(train_x, train_y, test_x, k, num_classes=10):
    """Double loop over plain Python floats; independent of the vectorized path."""
    preds = []
    for q in test_x:
        dists = []
        for i, t in enumerate(train_x):
            dists.append((float(np.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(q, t)))), i))
        dists.sort()  # by distance, then training index
        top = dists[:k]
        counts = {}
        for d, i in top:
            counts.setdefault(int(train_y[i]), []).append(d)
        best = max(len(v) for v in counts.values())
        tied = sorted(c for c, v in counts.items() if len(v) == best)
        preds.append(min(tied, key=lambda c: (sum(counts[c]) / len(counts[c]), c)))
    return np.array(preds)


def test_matches_brute_force():
    rng = np.random.default_rng(0)
    train_x, train_y = rng.normal(size=(60, 12)), rng.integers(0, 4, 60)
    test_x = rng.normal(size=(25, 12))
    for k in (1, 3, 5, 8):
        np.testing.assert_array_equal(knn_predict(train_x, train_y, test_x, k, 4, chunk=7),
                                      brute_force_knn(train_x, train_y, test_x, k, 4))


def test_self_match_k1():
    x = np.random.default_rng(1).normal(size=(30, 5))
    y = np.arange(30) % 10
    assert knn_accuracy(x, y, x, y, k=1) == 1.0


def test_equidistant_query_takes_lower_index():
    train_x = np.array([[0.0], [2.0]])
    assert knn_predict(train_x, np.array([7, 3]), np.array([[1.0]]), k=1)[0] == 7
    assert knn_predict(train_x, np.array([3, 7]), np.array([[1.0]]), k=1)[0] == 3


def test_vote_ties():
    # 2-2 tie: class 5 neighbours are closer on average
    assert vote(np.array([2, 5, 2, 5]), np.array([1.0, 0.5, 1.0, 0.6]), 10) == 5
    # equal counts and equal mean distance: lowest class
    assert vote(np.array([6, 4]), np.array([1.0, 1.0]), 10) == 4


def test_invalid_k():
    with pytest.raises(ValueError):
        knn_predict(np.zeros((3, 2)), np.zeros(3, int), np.zeros((1, 2)), k=0)
