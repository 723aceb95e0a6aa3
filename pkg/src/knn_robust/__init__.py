"""Certify or falsify data-poisoning robustness of KNN predictions."""

from .certify import CertifyOutcome, quick_certify
from .driver import Outcome, RobustnessQuery, Session, Verdict, baseline_decide, decide
from .errors import InvariantError, ParseError, UsageError
from .knn_core import (
    LabelCounter,
    LabeledDataset,
    NeighborOrder,
    build_neighbor_order,
    changes_from,
    counter_remove,
    distance,
    freq,
    label_counter,
    predict,
)
from .learning import ErrorCache, LearnConfig, learn_init, learn_update, partition_folds
from .search import MinRemovalProfile, gen_promising_subsets, min_removal

__version__ = "0.1.0"
