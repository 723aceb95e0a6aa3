import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import all_removals, delta_size, linear_min_removal, random_instance
from knn_robust import InvariantError, LabeledDataset, UsageError, build_neighbor_order, min_removal, predict
from knn_robust.driver import Session, baseline_outcomes
from knn_robust.search import (
    MinRemovalProfile,
    PromisingSubsetStream,
    _coalesce,
    adversarial_seeds,
    gen_promising_subsets,
    removal_profile,
)

STAR, TRI = 0, 1


def line_dataset(labels):
    X = np.arange(1, len(labels) + 1, dtype=float).reshape(-1, 1)
    return LabeledDataset.from_arrays(X, labels)


def test_direct_influence_needs_one_removal():
    # 3 nearest are star, star, triangle; the fourth is a triangle
    T = line_dataset([STAR, STAR, TRI, TRI, STAR])
    order = build_neighbor_order(T, [0.0])
    assert min_removal(order, T, 3, 2, STAR) == 1


def test_infeasible_returns_n_plus_one():
    T = line_dataset([STAR] * 8)
    order = build_neighbor_order(T, [0.0])
    assert min_removal(order, T, 3, 2, STAR) == 3


def test_already_violated_returns_zero():
    T = line_dataset([STAR, TRI, TRI])
    order = build_neighbor_order(T, [0.0])
    assert min_removal(order, T, 3, 2, STAR) == 0


def test_min_removal_rejects_negative_budget():
    T = line_dataset([STAR, TRI])
    with pytest.raises(UsageError):
        min_removal(build_neighbor_order(T, [0.0]), T, 1, -1, STAR)


@settings(max_examples=300)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=25), st.integers(0, 5),
       st.sampled_from([1, 3, 5, 7]), st.integers(0, 2))
def test_binary_search_matches_linear_scan(labels, n, K, y):
    if K > len(labels):
        return
    T = line_dataset(labels)
    order = build_neighbor_order(T, [0.0])
    assert min_removal(order, T, K, n, y) == linear_min_removal(labels, K, n, y)


def test_profile_feasible_and_summary():
    p = MinRemovalProfile(2, {1: 3, 3: 1, 5: 0})
    assert p.feasible() == {3: 1, 5: 0}
    assert p.summary() == {"1": 3, "3": 1, "5": 0}


def test_coalesce_drops_implied_constraints():
    assert _coalesce([(4, 1), (6, 1), (6, 2), (3, 2)]) == [(6, 1)]
    assert _coalesce([(4, 1), (6, 2)]) == [(4, 1), (6, 2)]


def test_stream_empty_when_nothing_feasible():
    T = line_dataset([STAR] * 6)
    order = build_neighbor_order(T, [0.0])
    profile = removal_profile(order, T, 2, STAR, (1, 3))
    stream = gen_promising_subsets(T, 2, [0.0], STAR, profile, order)
    assert list(stream) == []


def test_stream_full_enumeration_when_min_zero():
    T = line_dataset([STAR, TRI, TRI, STAR])
    order = build_neighbor_order(T, [0.0])
    profile = removal_profile(order, T, 2, STAR, (3,))
    stream = gen_promising_subsets(T, 2, [0.0], STAR, profile, order, guided=False)
    out = list(stream)
    assert stream.full_enumeration
    assert len(out) == delta_size(4, 2)
    assert set(out) == set(all_removals(T.id_list, 2))


def test_systematic_order_size_then_inside_first():
    T = line_dataset([STAR, STAR, TRI, STAR, STAR, TRI])
    stream = PromisingSubsetStream(list(range(6)), list(range(6)), 2, [(3, 1)], seeds=())
    out = list(stream)
    sizes = [len(r) for r in out]
    assert sizes == sorted(sizes)
    assert out[:3] == [(0,), (1,), (2,)]
    size2 = [r for r in out if len(r) == 2]
    inside_counts = [sum(1 for e in r if e < 3) for r in size2]
    assert inside_counts == sorted(inside_counts, reverse=True)


def test_seeds_go_first_and_are_not_repeated():
    stream = PromisingSubsetStream(list(range(6)), list(range(6)), 2, [(3, 1)], seeds=[(1, 2), (5,)])
    out = list(stream)
    # (5,) is outside the neighborhood and is dropped as a seed
    assert out[0] == (1, 2)
    assert len(out) == len(set(out))


def test_duplicate_emission_is_an_invariant_error():
    stream = PromisingSubsetStream(list(range(4)), list(range(4)), 1, [(2, 1)])
    stream._gen = iter([(0,), (0,)])
    next(stream)
    with pytest.raises(InvariantError):
        next(stream)


def test_adversarial_seed_removes_nearest_majority():
    T = line_dataset([STAR, STAR, TRI, TRI, STAR])
    order = build_neighbor_order(T, [0.0])
    profile = removal_profile(order, T, 2, STAR, (3,))
    seeds = adversarial_seeds(order, T, STAR, profile, k_hint=3)
    assert seeds[0] == (0,)


@pytest.mark.parametrize("seed", range(30))
def test_stream_admits_every_violating_removal(seed):
    T, q = random_instance(seed)
    session = Session(T, q.cfg, q.n)
    y = predict(T, session.baseline_k, q.x)
    order = build_neighbor_order(T, q.x)
    profile = removal_profile(order, T, q.n, y, q.cfg.k_candidates)
    stream = gen_promising_subsets(T, q.n, q.x, y, profile, order)
    emitted = set(stream)
    assert len(emitted) == stream.emitted
    for removal, _, y_new in baseline_outcomes(T, q, session):
        if y_new != y:
            assert removal in emitted
            assert stream.admits(removal)
