"""Pruning the space of removal sets for one test input.

For each candidate K, ``min_removal`` finds the fewest elements that must be
taken out of the query's K+n neighborhood before the K-neighbor vote can
move away from the default label. Feasibility is monotone in the number of
removals, so a binary search over [0, n+1] suffices. Any removal set that
changes the prediction must meet that minimum for at least one candidate K,
and ``gen_promising_subsets`` lazily enumerates exactly those sets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Iterator, Mapping, Optional, Sequence

from .errors import InvariantError, UsageError
from .knn_core import (
    LabelCounter,
    LabeledDataset,
    NeighborOrder,
    build_neighbor_order,
    changes_from,
    counter_remove,
)

log = logging.getLogger(__name__)

__all__ = [
    "MinRemovalProfile",
    "PromisingSubsetStream",
    "min_removal",
    "removal_profile",
    "adversarial_seeds",
    "gen_promising_subsets",
]


def _violates(labels: Sequence[int], K: int, i: int, y: int) -> bool:
    wide = LabelCounter.of(labels[: K + i])
    return changes_from(counter_remove(wide, y, i), y)


def min_removal(order: NeighborOrder, T: LabeledDataset, K: int, n: int, y: int) -> int:
    """Smallest i in [0, n] whose best-case removal flips the K-vote, else n+1."""
    if n < 0:
        raise UsageError("poison budget must be non-negative")
    labels = [T.label_of(i) for i in order.ranked_ids[: K + n]]
    start, end = 0, n + 1
    while start < end:
        mid = (start + end) // 2
        if _violates(labels, K, mid, y):
            end = mid
        else:
            start = mid + 1
    return start


@dataclass(frozen=True)
class MinRemovalProfile:
    n: int
    per_k: Mapping[int, int]

    def feasible(self) -> dict[int, int]:
        return {K: m for K, m in self.per_k.items() if m <= self.n}

    def summary(self) -> dict[str, int]:
        return {str(K): m for K, m in sorted(self.per_k.items())}


def removal_profile(order: NeighborOrder, T: LabeledDataset, n: int, y: int,
                    k_candidates: Sequence[int]) -> MinRemovalProfile:
    return MinRemovalProfile(n, {K: min_removal(order, T, K, n, y) for K in k_candidates})


def _coalesce(constraints: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Drop (length, min) constraints implied by another one.

    Neighborhood prefixes are nested, so (L, m) is redundant next to
    (L', m') whenever L' >= L and m' <= m.
    """
    kept = []
    for L, m in sorted(set(constraints), key=lambda c: (c[1], -c[0])):
        if not any(L2 >= L and m2 <= m for L2, m2 in kept):
            kept.append((L, m))
    return sorted(kept)


def adversarial_seeds(order: NeighborOrder, T: LabeledDataset, y: int,
                      profile: MinRemovalProfile, k_hint: Optional[int] = None) -> list[tuple[int, ...]]:
    """Concrete counterparts of the abstract worst case, smallest first.

    For a feasible K and i >= min_rmv(K), removing the i nearest y-labeled
    elements among the K+i nearest realizes the counter used by the check.
    """
    ys = [i for i in order.ranked_ids[: max(profile.per_k, default=0) + profile.n]
          if T.label_of(i) == y]
    rank = order.rank_of()
    hint = k_hint if k_hint is not None else 0
    plan = sorted(
        ((i, abs(K - hint), K) for K, m in profile.feasible().items()
         for i in range(max(m, 1), profile.n + 1)),
    )
    seeds, seen = [], set()
    for i, _, K in plan:
        chosen = [e for e in ys if rank[e] < K + i][:i]
        if len(chosen) < i:
            continue
        seed = tuple(sorted(chosen))
        if seed not in seen:
            seen.add(seed)
            seeds.append(seed)
    return seeds


class PromisingSubsetStream:
    """Lazy, duplicate-free stream of removal sets (sorted ID tuples).

    Optional seed sets are emitted first. The systematic part follows in
    ascending size; within a size, sets lying entirely inside the union
    neighborhood come first, then sets with more and more elements outside
    it. Inside and outside parts are each taken in lexicographic ID order,
    inside part first.
    """

    def __init__(self, ranked_ids: Sequence[int], all_ids: Sequence[int], n: int,
                 constraints: list[tuple[int, int]], track_fingerprints: bool = True,
                 seeds: Sequence[tuple[int, ...]] = ()):
        self.n = n
        self.constraints = _coalesce(constraints)
        span = max((L for L, _ in self.constraints), default=0)
        self._rank = {i: r for r, i in enumerate(ranked_ids[:span])}
        self.inside = sorted(self._rank)
        inside = set(self.inside)
        self.outside = sorted(i for i in all_ids if i not in inside)
        self.full_enumeration = any(m == 0 for _, m in self.constraints)
        if self.full_enumeration:
            log.info("min_rmv = 0 for some candidate K: no pruning possible")
        self.seeds = [tuple(sorted(r)) for r in seeds if self.admits(r)]
        self._seed_set = set(self.seeds)
        self.emitted = 0
        self.fingerprints: Optional[set] = set() if track_fingerprints else None
        self._gen = self._generate()

    def admits(self, removal: Sequence[int]) -> bool:
        """Membership test for the stream, independent of generation."""
        if not 1 <= len(removal) <= self.n:
            return False
        ranks = [self._rank[i] for i in removal if i in self._rank]
        return any(sum(1 for r in ranks if r < L) >= m for L, m in self.constraints)

    def _inside_ok(self, combo: Sequence[int]) -> bool:
        ranks = [self._rank[i] for i in combo]
        return any(sum(1 for r in ranks if r < L) >= m for L, m in self.constraints)

    def _generate(self) -> Iterator[tuple[int, ...]]:
        if not self.constraints:
            return
        yield from self.seeds
        for removal in self._systematic():
            if removal not in self._seed_set:
                yield removal

    def _systematic(self) -> Iterator[tuple[int, ...]]:
        t_min = min(m for _, m in self.constraints)
        for size in range(1, self.n + 1):
            for t in range(size, t_min - 1, -1):
                if t > len(self.inside) or size - t > len(self.outside):
                    continue
                for inner in combinations(self.inside, t):
                    if not self._inside_ok(inner):
                        continue
                    if t == size:
                        yield inner
                        continue
                    for outer in combinations(self.outside, size - t):
                        yield tuple(sorted(inner + outer))

    def __iter__(self) -> "PromisingSubsetStream":
        return self

    def __next__(self) -> tuple[int, ...]:
        removal = next(self._gen)
        if self.fingerprints is not None:
            if removal in self.fingerprints:
                raise InvariantError(f"removal set {removal} emitted twice")
            self.fingerprints.add(removal)
        self.emitted += 1
        return removal


def gen_promising_subsets(
    T: LabeledDataset,
    n: int,
    x,
    y: int,
    profile: MinRemovalProfile,
    order: Optional[NeighborOrder] = None,
    track_fingerprints: bool = True,
    guided: bool = True,
    k_hint: Optional[int] = None,
) -> PromisingSubsetStream:
    """Stream every removal set that could change the prediction for ``x``.

    With ``guided`` the concrete worst-case removals for each feasible K go
    first (nearest to ``k_hint`` first); they are members of the stream
    anyway, so only the order changes.
    """
    if order is None:
        order = build_neighbor_order(T, x)
    constraints = [(min(K + n, len(T)), m) for K, m in profile.per_k.items() if m <= n]
    seeds = adversarial_seeds(order, T, y, profile, k_hint) if guided else ()
    return PromisingSubsetStream(order.ranked_ids, T.id_list, n, constraints,
                                 track_fingerprints, seeds)
