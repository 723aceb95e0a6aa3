import numpy as np
import pytest

from helpers import delta_size, indirect_influence_instance, random_instance, two_cluster_8
from knn_robust import (
    InvariantError,
    LabeledDataset,
    LearnConfig,
    Outcome,
    RobustnessQuery,
    Session,
    UsageError,
    Verdict,
    baseline_decide,
    decide,
    predict,
)
from knn_robust.driver import baseline_outcomes, replay_removal


def test_query_validation():
    cfg = LearnConfig(3, (1,))
    with pytest.raises(UsageError):
        RobustnessQuery([0.0], 0, cfg)
    with pytest.raises(UsageError):
        RobustnessQuery([0.0], 1, cfg, time_limit=0)
    with pytest.raises(UsageError):
        RobustnessQuery([0.0], 1, cfg, mode="fast")


def test_verdict_invariants():
    with pytest.raises(InvariantError):
        Verdict(Outcome.FALSIFIED, 0, 1, 0.0)
    with pytest.raises(InvariantError):
        Verdict(Outcome.CERTIFIED, 0, 1, 0.0, evidence=(1,))
    with pytest.raises(InvariantError):
        Verdict(Outcome.CERTIFIED, 0, 1, 0.0)


def test_two_cluster_quick_certified():
    T = two_cluster_8()
    q = RobustnessQuery([0.05], 1, LearnConfig(4, (1, 3), 0))
    v = decide(T, q)
    assert (v.outcome, v.certified_by, v.default_label) == (Outcome.CERTIFIED, "quick", 0)
    assert baseline_decide(T, q).outcome is Outcome.CERTIFIED


def test_indirect_influence_is_falsified():
    T, x, cfg = indirect_influence_instance()
    q = RobustnessQuery(x, 1, cfg)
    assert predict(T, 5, x) == 0 and predict(T, 3, x) == 1
    v = decide(T, q)
    assert v.outcome is Outcome.FALSIFIED
    assert (v.default_label, v.optimal_k) == (0, 5)
    k_new, y_new = replay_removal(T, cfg, v.evidence, x)
    assert y_new != 0
    assert replay_removal(T, cfg, (2,), x) == (3, 1)
    base = baseline_decide(T, q)
    assert base.outcome is Outcome.FALSIFIED and base.default_label == 0


def test_baseline_enumerates_all_removals():
    T = LabeledDataset.from_arrays(np.arange(10, dtype=float).reshape(-1, 1), [0] * 10)
    cfg = LearnConfig(2, (1,), 0)
    for n, expected in ((1, 10), (2, 55)):
        q = RobustnessQuery([0.0], n, cfg)
        assert sum(1 for _ in baseline_outcomes(T, q)) == expected == delta_size(10, n)
        v = baseline_decide(T, q)
        assert (v.outcome, v.subsets_checked) == (Outcome.CERTIFIED, expected)


def test_time_limit_gives_unknown():
    T, q = random_instance(11)
    q = RobustnessQuery(q.x, 2, q.cfg, time_limit=1e-9)
    v = decide(T, q, skip_quick=True)
    assert v.outcome in (Outcome.UNKNOWN, Outcome.CERTIFIED)
    if v.outcome is Outcome.UNKNOWN:
        assert v.reason == "time limit"
    assert baseline_decide(T, RobustnessQuery(q.x, 2, q.cfg, 1e-9, "baseline")).outcome is Outcome.UNKNOWN


def test_quick_only_reports_unknown_on_failure():
    T, x, cfg = indirect_influence_instance()
    v = decide(T, RobustnessQuery(x, 1, cfg), quick_only=True)
    assert v.outcome is Outcome.UNKNOWN
    assert "quick certify failed" in v.reason


def test_session_reuse_learns_once():
    T, q = random_instance(2)
    session = Session(T, q.cfg, 2)
    for seed in range(3):
        x = np.random.default_rng(seed).uniform(0, 10, 2)
        decide(T, RobustnessQuery(x, q.n, q.cfg), session, skip_quick=True)
    assert session.learn_init_calls == 1


def test_session_mismatch_rejected():
    T, q = random_instance(2)
    session = Session(T, q.cfg, 1)
    with pytest.raises(UsageError):
        decide(T, RobustnessQuery(q.x, 2, q.cfg), session)
    with pytest.raises(UsageError):
        decide(T.subset(T.id_list), q, Session(T, q.cfg, 2))


@pytest.mark.parametrize("seed", range(20))
def test_decide_agrees_with_baseline(seed):
    T, q = random_instance(seed + 500)
    session = Session(T, q.cfg, q.n)
    v = decide(T, q, session)
    b = baseline_decide(T, q, session)
    assert v.outcome == b.outcome
    if v.outcome is Outcome.FALSIFIED:
        assert len(v.evidence) <= q.n
        assert replay_removal(T, q.cfg, v.evidence, q.x)[1] != v.default_label
