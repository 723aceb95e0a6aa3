"""Exact KNN primitives: datasets, neighbor orders, label counters, prediction.

Everything here is immutable and deterministic. Distance ties are broken by
ascending element ID and vote ties by the smallest label, so two runs over the
same data always agree element for element.
"""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import UsageError

__all__ = [
    "LabeledDataset",
    "NeighborOrder",
    "LabelCounter",
    "distance",
    "build_neighbor_order",
    "label_counter",
    "freq",
    "counter_remove",
    "changes_from",
    "predict",
    "vote",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Training set with stable integer element IDs.

    Rows are kept in storage order; IDs travel with their rows into every
    derived subset, so ``T.without(R)`` still reports the original IDs.
    """

    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    _row: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels)
        if feats.ndim != 2:
            raise UsageError("features must be a 2-D array (elements x dimensions)")
        if feats.shape[1] < 1 and feats.shape[0] > 0:
            raise UsageError("feature dimension must be at least 1")
        if not (len(ids) == feats.shape[0] == len(labels)):
            raise UsageError("ids, features and labels must have the same length")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise UsageError("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.size and labels.min() < 0:
            raise UsageError("labels must be non-negative")
        row = {int(i): r for r, i in enumerate(ids)}
        if len(row) != len(ids):
            raise UsageError("element IDs must be unique")
        object.__setattr__(self, "ids", _frozen(ids.copy()))
        object.__setattr__(self, "features", _frozen(feats.copy()))
        object.__setattr__(self, "labels", _frozen(labels.copy()))
        object.__setattr__(self, "_row", row)

    @classmethod
    def from_arrays(cls, features, labels, ids=None) -> "LabeledDataset":
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        if ids is None:
            ids = np.arange(feats.shape[0])
        return cls(np.asarray(ids), feats, np.asarray(labels))

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, element_id: object) -> bool:
        return element_id in self._row

    @property
    def dimension(self) -> int:
        return int(self.features.shape[1])

    @property
    def id_list(self) -> list[int]:
        return [int(i) for i in self.ids]

    def distinct_labels(self) -> list[int]:
        return sorted({int(v) for v in self.labels})

    def row_of(self, element_id: int) -> int:
        try:
            return self._row[element_id]
        except KeyError:
            raise UsageError(f"unknown element ID {element_id}") from None

    def label_of(self, element_id: int) -> int:
        return int(self.labels[self.row_of(element_id)])

    def features_of(self, element_id: int) -> np.ndarray:
        return self.features[self.row_of(element_id)]

    def label_map(self) -> dict[int, int]:
        return {int(i): int(y) for i, y in zip(self.ids, self.labels)}

    def subset(self, keep: Iterable[int]) -> "LabeledDataset":
        keep = set(keep)
        mask = np.fromiter((int(i) in keep for i in self.ids), dtype=bool, count=len(self))
        return LabeledDataset(self.ids[mask], self.features[mask], self.labels[mask])

    def without(self, removed: Iterable[int]) -> "LabeledDataset":
        removed = set(removed)
        for r in removed:
            self.row_of(r)
        mask = np.fromiter((int(i) not in removed for i in self.ids), dtype=bool, count=len(self))
        return LabeledDataset(self.ids[mask], self.features[mask], self.labels[mask])

    def append(self, features, labels, ids) -> "LabeledDataset":
        feats = np.asarray(features, dtype=np.float64).reshape(-1, self.dimension)
        return LabeledDataset(
            np.concatenate([self.ids, np.asarray(ids, dtype=np.int64)]),
            np.vstack([self.features, feats]),
            np.concatenate([self.labels, np.asarray(labels, dtype=np.int64)]),
        )

    def permuted(self, perm: Sequence[int]) -> "LabeledDataset":
        """Same elements, different storage order (IDs unchanged)."""
        perm = np.asarray(perm)
        return LabeledDataset(self.ids[perm], self.features[perm], self.labels[perm])

    def equals(self, other: "LabeledDataset") -> bool:
        return (
            np.array_equal(self.ids, other.ids)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


def distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


@dataclass(frozen=True, eq=False)
class NeighborOrder:
    """All element IDs of a dataset ranked by (distance to query, ID)."""

    query: np.ndarray
    ranked_ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ranked_ids)

    def prefix(self, k: int, removed: Optional[Iterable[int]] = None) -> list[int]:
        """First ``k`` IDs after dropping ``removed`` (fewer if the order runs out)."""
        if not removed:
            return list(self.ranked_ids[:k])
        removed = removed if isinstance(removed, (set, frozenset)) else set(removed)
        out = []
        for i in self.ranked_ids:
            if len(out) >= k:
                break
            if i not in removed:
                out.append(i)
        return out

    def rank_of(self) -> dict[int, int]:
        return {i: r for r, i in enumerate(self.ranked_ids)}


def _ranked(features: np.ndarray, ids: np.ndarray, x: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.sum((features - x) ** 2, axis=1))
    return ids[np.lexsort((ids, d))]


def build_neighbor_order(T: LabeledDataset, x) -> NeighborOrder:
    if len(T) == 0:
        raise UsageError("cannot order neighbors in an empty dataset")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != T.dimension:
        raise UsageError(f"query has dimension {x.shape[0]}, dataset has {T.dimension}")
    ranked = _ranked(T.features, T.ids, x)
    return NeighborOrder(_frozen(x.copy()), tuple(int(i) for i in ranked))


class LabelCounter(Mapping):
    """Immutable multiset of labels. Zero counts are never stored."""

    __slots__ = ("_counts",)

    def __init__(self, counts: Optional[Mapping[int, int]] = None):
        clean = {}
        for label, c in (counts or {}).items():
            if c < 0:
                raise UsageError(f"negative count for label {label}")
            if c:
                clean[int(label)] = int(c)
        self._counts = clean

    @classmethod
    def of(cls, labels: Iterable[int]) -> "LabelCounter":
        counts: dict[int, int] = {}
        for y in labels:
            counts[y] = counts.get(y, 0) + 1
        return cls(counts)

    def __getitem__(self, label: int) -> int:
        return self._counts[label]

    def get(self, label, default=0):
        return self._counts.get(label, default)

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self._counts))

    def __len__(self) -> int:
        return len(self._counts)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, LabelCounter):
            return self._counts == other._counts
        if isinstance(other, Mapping):
            return self._counts == {k: v for k, v in other.items() if v}
        return NotImplemented

    def __hash__(self) -> int:
        return hash(frozenset(self._counts.items()))

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}:{self._counts[k]}" for k in self)
        return f"LabelCounter({{{inner}}})"

    def total(self) -> int:
        return sum(self._counts.values())


def label_counter(T: LabeledDataset, ids: Iterable[int]) -> LabelCounter:
    return LabelCounter.of(T.label_of(i) for i in ids)


def vote(labels: Iterable[int]) -> int:
    """Most frequent label of a label sequence, smallest label on ties."""
    counts: dict[int, int] = {}
    for y in labels:
        counts[y] = counts.get(y, 0) + 1
    if not counts:
        raise UsageError("cannot vote over an empty neighborhood")
    best = None
    best_c = -1
    for y, c in counts.items():
        if c > best_c or (c == best_c and y < best):
            best, best_c = y, c
    return best


def freq(c: Mapping[int, int]) -> int:
    items = [(y, k) for y, k in c.items() if k > 0]
    if not items:
        raise UsageError("freq of an empty label counter")
    return min(items, key=lambda t: (-t[1], t[0]))[0]


def counter_remove(c: Mapping[int, int], y: int, m: int) -> LabelCounter:
    if m < 0:
        raise UsageError("removal count must be non-negative")
    counts = dict(c.items())
    counts[y] = max(0, counts.get(y, 0) - m)
    return LabelCounter(counts)


def changes_from(c: Mapping[int, int], y: int) -> bool:
    """Conservative check: could the majority differ from ``y``?

    A tie with another label counts as a change, so a False answer means
    ``y`` wins strictly regardless of how ties are broken.
    """
    cy = c.get(y, 0)
    if cy == 0:
        return True
    return any(k >= cy for label, k in c.items() if label != y and k > 0)


def predict(T: LabeledDataset, K: int, x, order: Optional[NeighborOrder] = None) -> int:
    if not 1 <= K <= len(T):
        raise UsageError(f"K={K} out of range for a dataset of {len(T)} elements")
    if order is None:
        order = build_neighbor_order(T, x)
    return vote(T.label_of(i) for i in order.prefix(K))
