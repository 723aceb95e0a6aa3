"""Independent reference implementations and instance generators for tests.

The oracles here deliberately avoid the library's code paths: plain Python
loops, ``math.dist`` and full sorts, so agreement with the library means
something.
"""

import math
from itertools import combinations

import numpy as np

from knn_robust import LabeledDataset, LearnConfig, RobustnessQuery


def points_of(T):
    return [(int(i), tuple(float(v) for v in f), int(y)) for i, f, y in zip(T.ids, T.features, T.labels)]


def brute_neighbors(points, x, k):
    ranked = sorted(points, key=lambda p: (math.dist(p[1], x), p[0]))
    return [p[0] for p in ranked[:k]]


def brute_majority(labels):
    tally = {}
    for y in labels:
        tally[y] = tally.get(y, 0) + 1
    top = max(tally.values())
    return min(y for y, c in tally.items() if c == top)


def brute_predict(points, k, x):
    label = {p[0]: p[2] for p in points}
    return brute_majority([label[i] for i in brute_neighbors(points, x, k)])


def plain_cv(points, groups, candidates):
    """Cross validation written out as the textbook loop; returns (K, mean errors)."""
    members = {p[0]: p for p in points}
    total = len(points)
    train_min = total - max(len(g) for g in groups)
    errors = {}
    for K in candidates:
        if K > train_min:
            continue
        rates = []
        for g in groups:
            if not g:
                continue
            held = set(g)
            train = [p for p in points if p[0] not in held]
            wrong = 0
            for i in g:
                _, feat, y = members[i]
                if brute_predict(train, K, feat) != y:
                    wrong += 1
            rates.append(wrong / len(g))
        errors[K] = sum(rates) / len(rates)
    best = min(errors.values())
    return min(K for K, e in errors.items() if math.isclose(e, best, abs_tol=1e-12)), errors


def plain_cv_wrong_sets(points, groups, K):
    members = {p[0]: p for p in points}
    out = []
    for g in groups:
        held = set(g)
        train = [p for p in points if p[0] not in held]
        out.append({i for i in g if brute_predict(train, K, members[i][1]) != members[i][2]})
    return out


def linear_min_removal(ranked_labels, K, n, y):
    """Least i with a possible majority change after removing i y's from the K+i nearest."""
    for i in range(n + 1):
        window = ranked_labels[: K + i]
        tally = {}
        for lab in window:
            tally[lab] = tally.get(lab, 0) + 1
        tally[y] = max(0, tally.get(y, 0) - i)
        if tally[y] == 0 or any(c >= tally[y] for lab, c in tally.items() if lab != y):
            return i
    return n + 1


def all_removals(ids, n):
    for size in range(1, n + 1):
        yield from combinations(sorted(ids), size)


def delta_size(m, n):
    return sum(math.comb(m, i) for i in range(1, n + 1))


def random_instance(seed, k_candidates=(1, 3, 5), folds=5):
    """Small clustered instance: |T| in [20, 40], D = 2, 2-3 labels, n in {1, 2}.

    Each label is an isotropic Gaussian (sd 1) around a center drawn in
    [0, 10]^2; the test input is a fresh draw from a random label's cluster.
    """
    rng = np.random.default_rng(seed)
    m = int(rng.integers(20, 41))
    n_labels = int(rng.integers(2, 4))
    centers = rng.uniform(0, 10, (n_labels, 2))
    labels = rng.integers(0, n_labels, m)
    labels[:n_labels] = np.arange(n_labels)
    X = centers[labels] + rng.normal(0, 1.0, (m, 2))
    T = LabeledDataset.from_arrays(X, labels)
    n = int(rng.integers(1, 3))
    x = centers[rng.integers(n_labels)] + rng.normal(0, 1.0, 2)
    return T, RobustnessQuery(x, n, LearnConfig(folds, k_candidates, seed))


def two_cluster_8():
    X = [0.0, 0.1, 0.2, 0.3, 10.0, 10.1, 10.2, 10.3]
    y = [0, 0, 0, 0, 1, 1, 1, 1]
    return LabeledDataset.from_arrays(np.array(X).reshape(-1, 1), y)


def indirect_influence_instance():
    """T learns K=5 and predicts 0 at x; removing element 2 (far from x) makes
    cross validation pick K=3, which predicts 1."""
    X = [2.0, 0.9, 6.5, 4.6, 9.9, 8.5, 8.4, 0.5, 5.6, 6.1, 0.5, 4.8, 3.3, 2.2]
    y = [0, 0, 1, 0, 0, 1, 0, 1, 0, 1, 1, 0, 0, 0]
    T = LabeledDataset.from_arrays(np.array(X).reshape(-1, 1), y)
    return T, np.array([0.7]), LearnConfig(3, (3, 5), 0)
