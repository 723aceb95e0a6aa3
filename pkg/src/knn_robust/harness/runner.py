"""Batch experiments over a test file and the JSON run report."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from ..driver import Outcome, RobustnessQuery, Session, Verdict, baseline_decide, decide, replay_removal
from ..errors import InvariantError, UsageError
from ..knn_core import LabeledDataset
from ..learning import LearnConfig, default_k_candidates
from .data import inject_poison, load_csv

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
MODES = ("full", "quick-only", "baseline", "falsify-only")
TIMING_FIELDS = ("elapsed", "mean_time", "total_time")
DEFAULT_TIME_LIMIT = {"baseline": 7200.0}
FALLBACK_TIME_LIMIT = 1800.0


@dataclass(frozen=True)
class ExperimentConfig:
    train_path: str
    test_path: str
    n: int
    folds: int = 10
    k_stride: Optional[int] = None
    k_max: Optional[int] = None
    k_list: Optional[tuple[int, ...]] = None
    seed: int = 0
    time_limit_secs: Optional[float] = None
    mode: str = "full"
    poison_max: Optional[int] = None
    poison_seed: int = 0
    header: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n < 1:
            raise UsageError("n must be at least 1")
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {', '.join(MODES)}")
        if self.k_list is not None and (self.k_stride is not None or self.k_max is not None):
            raise UsageError("give either an explicit K list or a stride/maximum, not both")
        if self.workers < 1:
            raise UsageError("workers must be at least 1")
        if self.poison_max is not None and self.poison_max < 1:
            raise UsageError("poison maximum must be at least 1")
        for p in (self.train_path, self.test_path):
            if not Path(p).exists():
                raise UsageError(f"file not found: {p}")

    @property
    def time_limit(self) -> float:
        if self.time_limit_secs is not None:
            return self.time_limit_secs
        return DEFAULT_TIME_LIMIT.get(self.mode, FALLBACK_TIME_LIMIT)

    def learn_config(self, size: int) -> LearnConfig:
        if self.k_list is not None:
            ks = tuple(self.k_list)
        else:
            ks = default_k_candidates(size, self.k_stride, self.k_max)
        return LearnConfig(self.folds, ks, self.seed)


@dataclass
class RunReport:
    config: dict
    dataset: dict
    learn: dict
    inputs: list[dict]
    aggregate: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "dataset": self.dataset,
            "learn": self.learn,
            "aggregate": self.aggregate,
            "inputs": self.inputs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise UsageError(f"unsupported report schema {d.get('schema_version')!r}")
        return cls(d["config"], d["dataset"], d["learn"], d["inputs"], d["aggregate"])

    @classmethod
    def read(cls, path) -> "RunReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def outcomes(self) -> list[str]:
        return [row["outcome"] for row in self.inputs]


def strip_timing(d):
    """Copy of a report dict with all timing fields removed."""
    if isinstance(d, dict):
        return {k: strip_timing(v) for k, v in d.items() if k not in TIMING_FIELDS}
    if isinstance(d, list):
        return [strip_timing(v) for v in d]
    return d


def aggregate(rows: Sequence[dict]) -> dict:
    total = len(rows)
    counts = {o.value: sum(1 for r in rows if r["outcome"] == o.value) for o in Outcome}
    quick = sum(1 for r in rows if r.get("certified_by") == "quick")
    pct = {k: (round(100.0 * v / total, 1) if total else 0.0) for k, v in counts.items()}
    times = [r["elapsed"] for r in rows]
    return {
        "inputs": total,
        "counts": counts,
        "certified_quick": quick,
        "certified_exhausted": counts["certified"] - quick,
        "percentages": pct,
        "errors": sum(1 for r in rows if r.get("error")),
        "mean_time": sum(times) / total if total else 0.0,
        "total_time": sum(times),
    }


def _row(index: int, v: Verdict, test_label: int) -> dict:
    return {
        "index": index,
        "outcome": v.outcome.value,
        "certified_by": v.certified_by,
        "optimal_k": v.optimal_k,
        "default_label": v.default_label,
        "test_label": test_label,
        "evidence": list(v.evidence) if v.evidence is not None else None,
        "subsets_checked": v.subsets_checked,
        "min_rmv": v.diagnostics.get("min_rmv"),
        "full_enumeration": v.diagnostics.get("full_enumeration"),
        "reason": v.reason,
        "elapsed": v.elapsed,
    }


def _error_row(index: int, exc: Exception, test_label: int, elapsed: float) -> dict:
    return {
        "index": index,
        "outcome": Outcome.UNKNOWN.value,
        "certified_by": None,
        "optimal_k": None,
        "default_label": None,
        "test_label": test_label,
        "evidence": None,
        "subsets_checked": 0,
        "min_rmv": None,
        "full_enumeration": None,
        "reason": f"error: {exc}",
        "error": type(exc).__name__,
        "elapsed": elapsed,
    }


def run_one(session: Session, mode: str, x, n: int, time_limit: float) -> Verdict:
    T = session.T
    if mode == "baseline":
        return baseline_decide(T, RobustnessQuery(x, n, session.cfg, time_limit, "baseline"), session)
    q = RobustnessQuery(x, n, session.cfg, time_limit)
    return decide(T, q, session, skip_quick=mode == "falsify-only", quick_only=mode == "quick-only")


def _evaluate(session: Session, mode: str, index: int, x, label: int, n: int, time_limit: float) -> dict:
    started = time.perf_counter()
    try:
        return _row(index, run_one(session, mode, x, n, time_limit), label)
    except Exception as exc:  # one bad input must not sink the batch
        log.exception("input %d failed", index)
        return _error_row(index, exc, label, time.perf_counter() - started)


_worker_session: Optional[Session] = None


def _init_worker(T: LabeledDataset, cfg: LearnConfig, n: int) -> None:
    global _worker_session
    _worker_session = Session(T, cfg, n)


def _worker_eval(args) -> dict:
    return _evaluate(_worker_session, *args)


def prepare(cfg: ExperimentConfig) -> tuple[LabeledDataset, frozenset, LabeledDataset, LearnConfig]:
    """Load (and optionally poison) the data and build the learning config."""
    train = load_csv(cfg.train_path, cfg.header)
    test = load_csv(cfg.test_path, cfg.header)
    if test.dimension != train.dimension:
        raise UsageError(f"test features have dimension {test.dimension}, training has {train.dimension}")
    injected = frozenset()
    if cfg.poison_max is not None:
        train, injected = inject_poison(train, cfg.poison_max, cfg.poison_seed)
    lcfg = cfg.learn_config(len(train))
    lcfg.check(len(train))
    return train, injected, test, lcfg


def run_experiment(cfg: ExperimentConfig, out: Optional[str] = None) -> RunReport:
    train, injected, test, lcfg = prepare(cfg)
    limit = cfg.time_limit
    jobs = [(cfg.mode, r, test.features[r], int(test.labels[r]), cfg.n, limit) for r in range(len(test))]
    if cfg.workers == 1:
        session = Session(train, lcfg, cfg.n)
        rows = [_evaluate(session, *job) for job in jobs]
    else:
        with ProcessPoolExecutor(cfg.workers, initializer=_init_worker,
                                 initargs=(train, lcfg, cfg.n)) as pool:
            rows = list(pool.map(_worker_eval, jobs))
    rows.sort(key=lambda r: r["index"])

    config = asdict(cfg)
    config["k_list"] = list(cfg.k_list) if cfg.k_list is not None else None
    config["time_limit_secs"] = limit
    report = RunReport(
        config=config,
        dataset={
            "train_size": len(train),
            "test_size": len(test),
            "dimension": train.dimension,
            "labels": train.distinct_labels(),
            "injected_ids": sorted(injected),
        },
        learn={"folds": lcfg.folds, "k_candidates": list(lcfg.k_candidates),
               "partition_seed": lcfg.partition_seed},
        inputs=rows,
        aggregate=aggregate(rows),
    )
    if out is not None:
        report.write(out)
    return report


def verify_report(report: RunReport, cfg: Optional[ExperimentConfig] = None) -> int:
    """Replay every falsified row's evidence from scratch; return how many were checked.

    Raises InvariantError if any evidence fails to change the prediction or the
    aggregate disagrees with the rows.
    """
    if cfg is None:
        c = dict(report.config)
        c["k_list"] = tuple(c["k_list"]) if c.get("k_list") is not None else None
        cfg = ExperimentConfig(**c)
    train, _, test, lcfg = prepare(cfg)
    if list(lcfg.k_candidates) != report.learn["k_candidates"]:
        raise InvariantError("report was produced with a different candidate set")
    agg = aggregate(report.inputs)
    if strip_timing(agg) != strip_timing(report.aggregate):
        raise InvariantError("aggregate does not match the per-input rows")
    checked = 0
    for row in report.inputs:
        if row["outcome"] != Outcome.FALSIFIED.value:
            continue
        evidence = row["evidence"]
        if not evidence or len(evidence) > cfg.n:
            raise InvariantError(f"input {row['index']}: evidence size out of range")
        _, y_new = replay_removal(train, lcfg, evidence, test.features[row["index"]])
        if y_new == row["default_label"]:
            raise InvariantError(f"input {row['index']}: evidence does not change the prediction")
        checked += 1
    return checked
