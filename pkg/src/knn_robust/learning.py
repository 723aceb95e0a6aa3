"""Choosing K by p-fold cross validation, from scratch and incrementally.

``learn_init`` runs the full cross validation once and keeps what later
removals need: the fold partition, the misclassified set of every
(candidate K, fold) pair, and each held-out element's neighbor prefix inside
its fold's training portion. ``learn_update`` then answers "which K would
cross validation pick on T minus R?" by re-predicting only the held-out
elements whose neighborhoods R touches.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .certify import certify_ranked_labels
from .errors import UsageError
from .knn_core import LabeledDataset, NeighborOrder, build_neighbor_order

log = logging.getLogger(__name__)

__all__ = [
    "LearnConfig",
    "ErrorCache",
    "CVResult",
    "UpdateResult",
    "default_k_candidates",
    "partition_folds",
    "restrict_groups",
    "usable_candidates",
    "cross_validate",
    "learn_init",
    "influenced_set",
    "update_error_sets",
    "learn_update",
]

Groups = tuple[tuple[int, ...], ...]


def default_k_candidates(size: int, stride: Optional[int] = None, k_max: Optional[int] = None,
                         max_count: int = 50) -> tuple[int, ...]:
    """Odd K values from 1 up to ``k_max`` (default ``size // 10``).

    ``stride`` keeps every stride-th odd value; when omitted it is the
    smallest stride giving at most ``max_count`` candidates.
    """
    top = size // 10 if k_max is None else k_max
    odds = list(range(1, max(top, 1) + 1, 2))
    if stride is None:
        stride = max(1, math.ceil(len(odds) / max_count))
    if stride < 1:
        raise UsageError("k stride must be positive")
    return tuple(odds[::stride])


@dataclass(frozen=True)
class LearnConfig:
    folds: int
    k_candidates: tuple[int, ...]
    partition_seed: int = 0

    def __post_init__(self) -> None:
        ks = tuple(int(k) for k in self.k_candidates)
        object.__setattr__(self, "k_candidates", ks)
        if self.folds < 2:
            raise UsageError("cross validation needs at least 2 folds")
        if not ks:
            raise UsageError("k_candidates must not be empty")
        if ks[0] < 1 or any(a >= b for a, b in zip(ks, ks[1:])):
            raise UsageError("k_candidates must be strictly ascending positive integers")

    @property
    def k_max(self) -> int:
        return self.k_candidates[-1]

    def check(self, size: int) -> None:
        """Raise unless every candidate is usable on every fold of a dataset of ``size``."""
        if self.folds > size:
            raise UsageError(f"{self.folds} folds but only {size} elements")
        limit = size - math.ceil(size / self.folds)
        if self.k_max > limit:
            raise UsageError(
                f"candidate K={self.k_max} exceeds the smallest fold training size {limit}"
            )

    @classmethod
    def for_dataset(cls, size: int, folds: int = 10, seed: int = 0,
                    stride: Optional[int] = None, k_max: Optional[int] = None) -> "LearnConfig":
        return cls(folds, default_k_candidates(size, stride, k_max), seed)


def partition_folds(T: LabeledDataset, p: int, seed: int) -> Groups:
    if p < 1:
        raise UsageError("number of folds must be positive")
    if p > len(T):
        raise UsageError(f"cannot split {len(T)} elements into {p} folds")
    rng = np.random.default_rng(seed)
    shuffled = T.ids[rng.permutation(len(T))]
    return tuple(tuple(sorted(int(i) for i in shuffled[j::p])) for j in range(p))


def restrict_groups(groups: Groups, removed: Iterable[int]) -> Groups:
    removed = set(removed)
    return tuple(tuple(i for i in g if i not in removed) for g in groups)


def usable_candidates(total: int, group_sizes: Sequence[int],
                      candidates: Sequence[int]) -> tuple[list[int], list[int]]:
    """Split candidates into those valid for every fold and those too large."""
    train_min = total - max(group_sizes)
    usable = [k for k in candidates if k <= train_min]
    skipped = [k for k in candidates if k > train_min]
    return usable, skipped


def _votes_at(labels: Sequence[int], ks: Sequence[int]) -> dict[int, int]:
    """Majority label of every prefix ``labels[:k]`` for ascending ``ks``."""
    counts: dict[int, int] = {}
    best, best_c = None, 0
    out = {}
    pos = 0
    for k in ks:
        while pos < k:
            y = labels[pos]
            c = counts.get(y, 0) + 1
            counts[y] = c
            if c > best_c or (c == best_c and y < best):
                best, best_c = y, c
            pos += 1
        out[k] = best
    return out


def _mean_error(err_sets: Mapping, sizes: Sequence[int], K: int) -> Fraction:
    rates = [Fraction(len(err_sets[(K, j)]), s) for j, s in enumerate(sizes) if s > 0]
    return sum(rates, Fraction(0)) / len(rates)


def _argmin_k(errors: Mapping[int, Fraction]) -> int:
    return min(errors, key=lambda k: (errors[k], k))


@dataclass(frozen=True)
class CVResult:
    k: int
    errors: dict[int, Fraction]
    err_sets: dict[tuple[int, int], frozenset]
    skipped: tuple[int, ...] = ()


def cross_validate(
    T: LabeledDataset,
    groups: Groups,
    candidates: Sequence[int],
    orders: Optional[Mapping[int, NeighborOrder]] = None,
) -> CVResult:
    """Plain p-fold cross validation over an explicit partition.

    ``orders`` may map element IDs to neighbor orders computed on any superset
    of ``T``; dropping elements never reorders the rest, so filtering such an
    order to the fold's training portion is exact.
    """
    sizes = [len(g) for g in groups]
    if sum(sizes) != len(T):
        raise UsageError("groups do not partition the dataset")
    usable, skipped = usable_candidates(len(T), sizes, candidates)
    if not usable:
        raise UsageError("no candidate K is valid for this dataset and partition")
    if skipped:
        log.debug("skipping candidates %s: larger than the fold training size", skipped)
    k_top = usable[-1]
    labels = T.label_map()
    err_sets: dict[tuple[int, int], set] = {(K, j): set() for K in usable for j in range(len(groups))}
    for j, g in enumerate(groups):
        held_out = set(g)
        for x in g:
            order = orders[x] if orders is not None else build_neighbor_order(T, T.features_of(x))
            near = []
            for i in order.ranked_ids:
                if i in labels and i not in held_out:
                    near.append(labels[i])
                    if len(near) == k_top:
                        break
            for K, guess in _votes_at(near, usable).items():
                if guess != labels[x]:
                    err_sets[(K, j)].add(x)
    frozen = {key: frozenset(v) for key, v in err_sets.items()}
    errors = {K: _mean_error(frozen, sizes, K) for K in usable}
    return CVResult(_argmin_k(errors), errors, frozen, tuple(skipped))


@dataclass(frozen=True, eq=False)
class ErrorCache:
    """Everything ``learn_update`` reuses. Never mutated after ``learn_init``."""

    dataset: LabeledDataset
    cfg: LearnConfig
    budget: int
    groups: Groups
    k: int
    errors: dict[int, Fraction]
    err_sets: dict[tuple[int, int], frozenset]
    fold_of: dict[int, int]
    fold_prefix: dict[int, tuple[int, ...]]
    fold_certified: dict[int, bool]
    dependents: dict[int, frozenset] = field(repr=False)
    labels: dict[int, int] = field(repr=False, default_factory=dict)

    def group_sizes(self) -> list[int]:
        return [len(g) for g in self.groups]


def learn_init(T: LabeledDataset, cfg: LearnConfig, budget: int = 0) -> tuple[int, ErrorCache]:
    """Cross validate on ``T`` and build the cache for removals of up to ``budget`` elements."""
    cfg.check(len(T))
    if budget < 0:
        raise UsageError("poison budget must be non-negative")
    groups = partition_folds(T, cfg.folds, cfg.partition_seed)
    depth = cfg.k_max + budget
    labels = T.label_map()
    fold_of = {i: j for j, g in enumerate(groups) for i in g}
    fold_of_arr = np.array([fold_of[int(i)] for i in T.ids])

    fold_prefix: dict[int, tuple[int, ...]] = {}
    fold_certified: dict[int, bool] = {}
    dependents: dict[int, set] = {int(i): set() for i in T.ids}
    err_sets = {(K, j): set() for K in cfg.k_candidates for j in range(len(groups))}
    for r, xid in enumerate(T.ids):
        xid = int(xid)
        j = fold_of[xid]
        d = np.sqrt(np.sum((T.features - T.features[r]) ** 2, axis=1))
        ranked = np.lexsort((T.ids, d))
        ranked = ranked[fold_of_arr[ranked] != j][:depth]
        prefix = tuple(int(i) for i in T.ids[ranked])
        fold_prefix[xid] = prefix
        near = [labels[i] for i in prefix]
        for K, guess in _votes_at(near, cfg.k_candidates).items():
            if guess != labels[xid]:
                err_sets[(K, j)].add(xid)
        fold_certified[xid] = certify_ranked_labels(near, budget, cfg.k_candidates).certified
        for i in prefix[: cfg.k_max]:
            dependents[i].add(xid)

    frozen = {key: frozenset(v) for key, v in err_sets.items()}
    sizes = [len(g) for g in groups]
    errors = {K: _mean_error(frozen, sizes, K) for K in cfg.k_candidates}
    k = _argmin_k(errors)
    cache = ErrorCache(
        dataset=T,
        cfg=cfg,
        budget=budget,
        groups=groups,
        k=k,
        errors=errors,
        err_sets=frozen,
        fold_of=fold_of,
        fold_prefix=fold_prefix,
        fold_certified=fold_certified,
        dependents={i: frozenset(s) for i, s in dependents.items()},
        labels=labels,
    )
    return k, cache


def _fold_certified(cache: ErrorCache, x: int, n: int) -> bool:
    if n == cache.budget:
        return cache.fold_certified[x]
    labels = [cache.dataset.label_of(i) for i in cache.fold_prefix[x]]
    return certify_ranked_labels(labels, n, cache.cfg.k_candidates).certified


def _check_removal(R: Iterable[int], cache: ErrorCache, n: int) -> frozenset:
    R = frozenset(int(r) for r in R)
    if n > cache.budget:
        raise UsageError(f"budget n={n} exceeds the cache depth built for n={cache.budget}")
    if len(R) > n:
        raise UsageError(f"removal set of size {len(R)} exceeds the budget n={n}")
    for r in R:
        if r not in cache.fold_of:
            raise UsageError(f"unknown element ID {r}")
    return R


def _influenced(R: frozenset, cache: ErrorCache, n: int) -> dict[int, set]:
    per_fold: dict[int, set] = {}
    touched = set().union(*(cache.dependents[r] for r in R)) if R else set()
    for x in touched - R:
        if not _fold_certified(cache, x, n):
            per_fold.setdefault(cache.fold_of[x], set()).add(x)
    return per_fold


def influenced_set(R: Iterable[int], fold_j: int, cache: ErrorCache, n: int,
                   cfg: Optional[LearnConfig] = None) -> frozenset:
    """Held-out elements of fold ``fold_j`` whose classification R might change."""
    if cfg is not None and cfg != cache.cfg:
        raise UsageError("config differs from the one the cache was built with")
    R = _check_removal(R, cache, n)
    return frozenset(_influenced(R, cache, n).get(fold_j, ()))


@dataclass(frozen=True)
class UpdateResult:
    k: int
    errors: dict[int, Fraction]
    err_sets: dict[tuple[int, int], frozenset]
    explicit: dict[tuple[int, int], frozenset]
    new_plus: dict[tuple[int, int], frozenset]
    new_minus: dict[tuple[int, int], frozenset]
    influenced: frozenset
    skipped: tuple[int, ...] = ()


def _fold_weights(sizes: Sequence[int]) -> tuple[list[int], int]:
    """Integer weights w_j with mean error = sum(|errSet_j| * w_j) / denom.

    Empty folds get weight 0 and drop out of the mean.
    """
    live = [s for s in sizes if s > 0]
    scale = math.lcm(*live)
    return [scale // s if s else 0 for s in sizes], scale * len(live)


def _update(R: frozenset, cache: ErrorCache, n: int, keep_sets: bool):
    ks = cache.cfg.k_candidates
    r_by_fold: dict[int, list[int]] = {}
    for r in R:
        r_by_fold.setdefault(cache.fold_of[r], []).append(r)
    sizes = [len(g) - len(r_by_fold.get(j, ())) for j, g in enumerate(cache.groups)]
    usable, skipped = usable_candidates(len(cache.dataset) - len(R), sizes, ks)
    if not usable:
        raise UsageError("no candidate K is valid after the removal")
    if skipped:
        log.debug("skipping candidates %s after removing %d elements", skipped, len(R))

    labels = cache.labels
    influ = _influenced(R, cache, n)
    plus: dict[tuple[int, int], set] = {}
    minus: dict[tuple[int, int], set] = {}
    k_top = usable[-1]
    for j, members in influ.items():
        for x in members:
            prefix = cache.fold_prefix[x]
            first_hit = next(r for r, i in enumerate(prefix) if i in R)
            # votes over prefixes that end before the first removed neighbor cannot change
            affected = [K for K in usable if K > first_hit]
            near = [labels[i] for i in prefix if i not in R][:k_top]
            for K, guess in _votes_at(near, affected).items():
                was_wrong = x in cache.err_sets[(K, j)]
                now_wrong = guess != labels[x]
                if now_wrong and not was_wrong:
                    plus.setdefault((K, j), set()).add(x)
                elif was_wrong and not now_wrong:
                    minus.setdefault((K, j), set()).add(x)

    weights, denom = _fold_weights(sizes)
    scores = {}
    for K in usable:
        total = 0
        for j, w in enumerate(weights):
            if not w:
                continue
            old = cache.err_sets[(K, j)]
            count = (len(old) - sum(1 for r in r_by_fold.get(j, ()) if r in old)
                     - len(minus.get((K, j), ())) + len(plus.get((K, j), ())))
            total += count * w
        scores[K] = total
    k = min(usable, key=lambda K: (scores[K], K))
    if not keep_sets:
        return k
    empty = frozenset()
    err_sets, explicit = {}, {}
    for K in usable:
        for j in range(len(sizes)):
            old = cache.err_sets[(K, j)]
            explicit[(K, j)] = old & R
            err_sets[(K, j)] = frozenset((old - R - minus.get((K, j), empty)) | plus.get((K, j), empty))
    keys = [(K, j) for K in usable for j in range(len(sizes))]
    return UpdateResult(
        k=k,
        errors={K: Fraction(scores[K], denom) for K in usable},
        err_sets=err_sets,
        explicit=explicit,
        new_plus={key: frozenset(plus.get(key, ())) for key in keys},
        new_minus={key: frozenset(minus.get(key, ())) for key in keys},
        influenced=frozenset().union(*influ.values()) if influ else frozenset(),
        skipped=tuple(skipped),
    )


def update_error_sets(R: Iterable[int], cache: ErrorCache, n: Optional[int] = None) -> UpdateResult:
    """Incremental cross validation on T minus R, with per-case bookkeeping."""
    n = cache.budget if n is None else n
    R = _check_removal(R, cache, n)
    if not R:
        raise UsageError("removal set must be non-empty")
    return _update(R, cache, n, keep_sets=True)


def learn_update(R: Iterable[int], cache: ErrorCache, cfg: Optional[LearnConfig] = None,
                 n: Optional[int] = None) -> int:
    if cfg is not None and cfg != cache.cfg:
        raise UsageError("config differs from the one the cache was built with")
    n = cache.budget if n is None else n
    R = _check_removal(R, cache, n)
    if not R:
        raise UsageError("removal set must be non-empty")
    return _update(R, cache, n, keep_sets=False)
