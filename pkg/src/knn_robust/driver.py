"""Per-input robustness decisions.

``decide`` is the fast pipeline: quick certification, one cross validation
on the full training set, then a time-bounded walk over the pruned removal
sets using incremental cross validation. ``baseline_decide`` walks every
removal set of size 1..n and re-runs cross validation from scratch for each;
it shares nothing with the fast pipeline beyond the KNN primitives and the
fold partition, which makes it the ground-truth oracle on small instances.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Iterator, Optional

import numpy as np

from .certify import quick_certify
from .errors import InvariantError, UsageError
from .knn_core import LabeledDataset, NeighborOrder, build_neighbor_order, freq, label_counter, predict, vote
from .learning import (
    ErrorCache,
    LearnConfig,
    cross_validate,
    learn_init,
    learn_update,
    partition_folds,
    restrict_groups,
)
from .search import gen_promising_subsets, removal_profile

log = logging.getLogger(__name__)

__all__ = [
    "Outcome",
    "RobustnessQuery",
    "Verdict",
    "Session",
    "decide",
    "baseline_decide",
    "baseline_outcomes",
    "replay_removal",
]


class Outcome(str, enum.Enum):
    CERTIFIED = "certified"
    FALSIFIED = "falsified"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class RobustnessQuery:
    x: np.ndarray
    n: int
    cfg: LearnConfig
    time_limit: Optional[float] = None
    mode: str = "new"

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64).reshape(-1))
        if self.n < 1:
            raise UsageError("poison budget n must be at least 1")
        if self.time_limit is not None and self.time_limit <= 0:
            raise UsageError("time limit must be positive")
        if self.mode not in ("new", "baseline"):
            raise UsageError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    default_label: Optional[int]
    optimal_k: Optional[int]
    elapsed: float
    subsets_checked: int = 0
    evidence: Optional[tuple[int, ...]] = None
    certified_by: Optional[str] = None
    reason: Optional[str] = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if (self.outcome is Outcome.FALSIFIED) != (self.evidence is not None):
            raise InvariantError("evidence must be present exactly for falsified verdicts")
        if self.outcome is Outcome.CERTIFIED and self.certified_by not in ("quick", "exhausted"):
            raise InvariantError("certified verdicts must record how they were certified")


class Session:
    """State shared by every query against one training set.

    The cross-validation cache and the fold partition depend only on the
    training set, the learning config and the budget, never on the query.
    """

    def __init__(self, T: LabeledDataset, cfg: LearnConfig, n: int):
        cfg.check(len(T))
        self.T = T
        self.cfg = cfg
        self.n = n
        self.learn_init_calls = 0

    @cached_property
    def learned(self) -> tuple[int, ErrorCache]:
        self.learn_init_calls += 1
        return learn_init(self.T, self.cfg, self.n)

    @cached_property
    def groups(self):
        return partition_folds(self.T, self.cfg.folds, self.cfg.partition_seed)

    @cached_property
    def element_orders(self) -> dict[int, NeighborOrder]:
        return {int(i): build_neighbor_order(self.T, f) for i, f in zip(self.T.ids, self.T.features)}

    @cached_property
    def baseline_k(self) -> int:
        return cross_validate(self.T, self.groups, self.cfg.k_candidates, self.element_orders).k

    def matches(self, T: LabeledDataset, q: RobustnessQuery) -> bool:
        return T is self.T and q.cfg == self.cfg and q.n <= self.n


def _session(T: LabeledDataset, q: RobustnessQuery, session: Optional[Session]) -> Session:
    if session is None:
        return Session(T, q.cfg, q.n)
    if not session.matches(T, q):
        raise UsageError("session was built for a different dataset, config or budget")
    return session


def replay_removal(T: LabeledDataset, cfg: LearnConfig, removal, x,
                   groups=None, orders=None) -> tuple[int, int]:
    """From-scratch learn and predict on T minus ``removal``; returns (K', y')."""
    removal = set(removal)
    if groups is None:
        groups = partition_folds(T, cfg.folds, cfg.partition_seed)
    reduced = T.without(removal)
    k = cross_validate(reduced, restrict_groups(groups, removal), cfg.k_candidates, orders).k
    return k, predict(reduced, k, x)


def _falsified(T, q, removal, y, k, started, checked, diagnostics) -> Verdict:
    _, y_new = replay_removal(T, q.cfg, removal, q.x)
    if y_new == y:
        raise InvariantError(f"evidence {removal} does not change the prediction {y}")
    return Verdict(Outcome.FALSIFIED, y, k, time.perf_counter() - started, checked,
                   evidence=tuple(sorted(removal)), diagnostics=diagnostics)


def decide(T: LabeledDataset, q: RobustnessQuery, session: Optional[Session] = None,
           skip_quick: bool = False, quick_only: bool = False, guided: bool = True) -> Verdict:
    """Certify or falsify n-poisoning robustness of the prediction for ``q.x``."""
    started = time.perf_counter()
    session = _session(T, q, session)
    ks = q.cfg.k_candidates
    order = build_neighbor_order(T, q.x)

    if not skip_quick:
        outcome = quick_certify(T, q.n, q.x, ks, order)
        if outcome.certified:
            y = freq(label_counter(T, order.prefix(ks[0])))
            return Verdict(Outcome.CERTIFIED, y, None, time.perf_counter() - started,
                           certified_by="quick")
        if quick_only:
            return Verdict(Outcome.UNKNOWN, None, None, time.perf_counter() - started,
                           reason=f"quick certify failed ({outcome.failing_check} check at "
                                  f"K={outcome.failing_k})")

    k, cache = session.learned
    y = predict(T, k, q.x, order)
    profile = removal_profile(order, T, q.n, y, ks)
    stream = gen_promising_subsets(T, q.n, q.x, y, profile, order, track_fingerprints=False,
                                   guided=guided, k_hint=k)
    diagnostics = {"min_rmv": profile.summary(), "full_enumeration": stream.full_enumeration}

    checked = 0
    for removal in stream:
        if q.time_limit is not None and time.perf_counter() - started >= q.time_limit:
            return Verdict(Outcome.UNKNOWN, y, k, time.perf_counter() - started, checked,
                           reason="time limit", diagnostics=diagnostics)
        checked += 1
        removal = frozenset(removal)
        k_new = learn_update(removal, cache, n=q.n)
        y_new = _predict_without(T, order, removal, k_new)
        if y_new != y:
            return _falsified(T, q, removal, y, k, started, checked, diagnostics)
    return Verdict(Outcome.CERTIFIED, y, k, time.perf_counter() - started, checked,
                   certified_by="exhausted", diagnostics=diagnostics)


def _predict_without(T: LabeledDataset, order: NeighborOrder, removal, k: int) -> int:
    return vote(T.label_of(i) for i in order.prefix(k, removal))


def _all_removals(T: LabeledDataset, n: int) -> Iterator[tuple[int, ...]]:
    ids = sorted(T.id_list)
    for size in range(1, n + 1):
        yield from combinations(ids, size)


def baseline_outcomes(T: LabeledDataset, q: RobustnessQuery, session: Optional[Session] = None
                      ) -> Iterator[tuple[tuple[int, ...], int, int]]:
    """Every removal set of size 1..n with its from-scratch (K', y')."""
    session = _session(T, q, session)
    orders = session.element_orders
    order = build_neighbor_order(T, q.x)
    for removal in _all_removals(T, q.n):
        removed = frozenset(removal)
        reduced = T.without(removed)
        k_new = cross_validate(reduced, restrict_groups(session.groups, removed),
                               q.cfg.k_candidates, orders).k
        yield removal, k_new, _predict_without(T, order, removed, k_new)


def baseline_decide(T: LabeledDataset, q: RobustnessQuery, session: Optional[Session] = None
                    ) -> Verdict:
    """Exhaustive enumeration with full cross validation per removal set."""
    started = time.perf_counter()
    session = _session(T, q, session)
    k = session.baseline_k
    y = predict(T, k, q.x)
    checked = 0
    for removal, _, y_new in baseline_outcomes(T, q, session):
        if q.time_limit is not None and time.perf_counter() - started >= q.time_limit:
            return Verdict(Outcome.UNKNOWN, y, k, time.perf_counter() - started, checked,
                           reason="time limit")
        checked += 1
        if y_new != y:
            return _falsified(T, q, removal, y, k, started, checked, {})
    return Verdict(Outcome.CERTIFIED, y, k, time.perf_counter() - started, checked,
                   certified_by="exhausted")
