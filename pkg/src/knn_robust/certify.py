"""Sound but incomplete robustness certification in the label-counter domain.

For every candidate K the check reasons only about the label counts of the
K+n nearest neighbors: if removing n elements carrying the majority label
still leaves that label strictly ahead, no removal of at most n training
elements can flip the K-neighbor vote. A second check requires all candidate
K values to agree, which rules out a flip caused by a change of K.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import UsageError
from .knn_core import (
    LabelCounter,
    LabeledDataset,
    NeighborOrder,
    build_neighbor_order,
    changes_from,
    counter_remove,
    freq,
)

__all__ = ["CertifyOutcome", "quick_certify", "certify_ranked_labels"]

DIRECT = "direct"
INDIRECT = "indirect"


@dataclass(frozen=True)
class CertifyOutcome:
    certified: bool
    failing_k: Optional[int] = None
    failing_check: Optional[str] = None

    def __bool__(self) -> bool:
        return self.certified


def certify_ranked_labels(
    ranked_labels: Sequence[int], n: int, k_candidates: Sequence[int]
) -> CertifyOutcome:
    """Run both checks given the labels of the neighbors in rank order.

    ``ranked_labels`` must hold at least ``max(k_candidates) + n`` entries or
    the whole dataset, whichever is shorter; longer prefixes are clamped.
    """
    seen_labels = set()
    for K in k_candidates:
        y = freq(LabelCounter.of(ranked_labels[:K]))
        seen_labels.add(y)
        wide = LabelCounter.of(ranked_labels[: K + n])
        if changes_from(counter_remove(wide, y, n), y):
            return CertifyOutcome(False, K, DIRECT)
        if len(seen_labels) > 1:
            return CertifyOutcome(False, K, INDIRECT)
    return CertifyOutcome(True)


def quick_certify(
    T: LabeledDataset,
    n: int,
    x,
    k_candidates: Sequence[int],
    order: Optional[NeighborOrder] = None,
) -> CertifyOutcome:
    if n < 0:
        raise UsageError("poison budget must be non-negative")
    if order is None:
        order = build_neighbor_order(T, x)
    depth = max(k_candidates) + n
    labels = [T.label_of(i) for i in order.ranked_ids[:depth]]
    return certify_ranked_labels(labels, n, k_candidates)
