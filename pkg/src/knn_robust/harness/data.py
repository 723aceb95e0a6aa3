"""CSV ingestion and seeded poison injection."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import ParseError, UsageError
from ..knn_core import LabeledDataset

PathLike = Union[str, Path]

# Half-width of the feature noise, as a fraction of each feature's observed range.
PERTURBATION = 0.10


def load_csv(path: PathLike, header: bool = False) -> LabeledDataset:
    """Read D feature columns followed by one integer label column.

    Element IDs are assigned 0..m-1 in file order.
    """
    path = Path(path)
    if not path.exists():
        raise UsageError(f"file not found: {path}")
    feats, labels = [], []
    dim = None
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ParseError("need at least one feature column and a label column", lineno)
            if dim is None:
                dim = len(row) - 1
            elif len(row) - 1 != dim:
                raise ParseError(f"expected {dim + 1} columns, found {len(row)}", lineno)
            try:
                values = [float(c) for c in row[:-1]]
            except ValueError:
                raise ParseError(f"non-numeric feature in {row[:-1]!r}", lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError("features must be finite", lineno)
            raw = row[-1].strip()
            try:
                label = float(raw)
            except ValueError:
                raise ParseError(f"non-numeric label {raw!r}", lineno) from None
            if not label.is_integer() or label < 0:
                raise ParseError(f"label {raw!r} is not a non-negative integer", lineno)
            feats.append(values)
            labels.append(int(label))
    if not feats:
        raise ParseError(f"{path} contains no data rows")
    return LabeledDataset.from_arrays(np.array(feats), np.array(labels))


def write_csv(T: LabeledDataset, path: PathLike, header: bool = False) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"f{i}" for i in range(T.dimension)] + ["label"])
        for f, y in zip(T.features, T.labels):
            w.writerow([repr(float(v)) for v in f] + [int(y)])


def inject_poison(T: LabeledDataset, n: int, seed: int) -> tuple[LabeledDataset, frozenset]:
    """Append between 1 and n mutated copies of random elements.

    Each copy gets uniform feature noise within +/-10% of the feature's
    observed range and a label drawn uniformly from the other labels.
    """
    if n < 1:
        raise UsageError("poison budget must be at least 1")
    labels = T.distinct_labels()
    if len(labels) < 2:
        raise UsageError("poisoning needs at least two distinct labels")
    rng = np.random.default_rng(seed)
    count = int(rng.integers(1, n + 1))
    sources = rng.integers(0, len(T), size=count)
    span = T.features.max(axis=0) - T.features.min(axis=0)
    noise = rng.uniform(-PERTURBATION, PERTURBATION, size=(count, T.dimension)) * span
    feats = T.features[sources] + noise
    new_labels = []
    for r in sources:
        others = [y for y in labels if y != T.labels[r]]
        new_labels.append(others[int(rng.integers(len(others)))])
    start = int(T.ids.max()) + 1
    new_ids = list(range(start, start + count))
    return T.append(feats, new_labels, new_ids), frozenset(new_ids)
