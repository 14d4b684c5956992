"""Dataset container, CSV I/O, scaling and fold assignment."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    EmptyDatasetError,
    MissingFileError,
    MissingLabelColumnError,
    MissingValueError,
    NonNumericCellError,
    RaggedRowError,
)
from .rng import RngStream


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """An n x p feature matrix with optional integer class labels.

    Arrays are copied and marked read-only on construction, so a Dataset can
    be shared freely.
    """

    features: np.ndarray
    labels: Optional[np.ndarray] = None
    feature_names: Sequence[str] = field(default_factory=tuple)
    class_names: Sequence[str] = field(default_factory=tuple)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if not np.all(np.isfinite(x)):
            raise MissingValueError("features contain NaN or infinite values")
        n, p = x.shape
        names = tuple(self.feature_names) or tuple(f"Feature {i}" for i in range(p))
        if len(names) != p:
            raise DataError(f"expected {p} feature names, got {len(names)}")
        if len(set(names)) != p:
            raise DataError("feature names must be unique")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "feature_names", names)

        if self.labels is None:
            object.__setattr__(self, "class_names", tuple(self.class_names))
            return
        y = np.asarray(self.labels)
        if y.shape != (n,):
            raise DataError(f"expected {n} labels, got shape {y.shape}")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise DataError("labels must be integers")
        y = y.astype(np.int64)
        classes = tuple(self.class_names)
        if not classes:
            k = int(y.max()) + 1 if y.size else 0
            classes = tuple(f"Class {c}" for c in range(k))
        if y.size and (y.min() < 0 or y.max() >= len(classes)):
            raise DataError(f"labels must lie in 0..{len(classes) - 1}")
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "class_names", classes)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def k(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.features[idx], labels, self.feature_names, self.class_names)

    def equals(self, other: "Dataset") -> bool:
        """Bit-exact comparison of values, labels and names."""
        if self.feature_names != other.feature_names or self.class_names != other.class_names:
            return False
        if self.features.shape != other.features.shape:
            return False
        if self.features.tobytes() != other.features.tobytes():
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)


def _parse_float(cell: str, row: int, column: str) -> float:
    text = cell.strip()
    if text == "" or text.lower() in ("na", "nan", "null"):
        raise MissingValueError(f"missing value at row {row}, column {column!r}")
    try:
        value = float(text)
    except ValueError:
        raise NonNumericCellError(
            f"non-numeric cell {cell!r} at row {row}, column {column!r}"
        ) from None
    if not math.isfinite(value):
        raise MissingValueError(f"non-finite value at row {row}, column {column!r}")
    return value


def load_csv(path, label_column: Optional[str] = "label") -> Dataset:
    """Read a headed, comma-separated numeric table.

    ``label_column`` names the class column (integers or class-name strings);
    pass ``None`` for an unlabeled file.  String class names are indexed in
    order of first appearance.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingFileError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    while rows and not any(c.strip() for c in rows[-1]):
        rows.pop()
    if not rows:
        raise EmptyDatasetError("empty dataset: file has no header")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise EmptyDatasetError("empty dataset")

    label_idx = None
    if label_column is not None:
        if label_column not in header:
            raise MissingLabelColumnError(f"label column {label_column!r} not found in header")
        label_idx = header.index(label_column)
    feature_cols = [j for j in range(len(header)) if j != label_idx]

    features = np.empty((len(body), len(feature_cols)), dtype=np.float64)
    raw_labels = []
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise RaggedRowError(f"row {i} has {len(row)} cells, header has {len(header)}")
        for out_j, j in enumerate(feature_cols):
            features[i - 2, out_j] = _parse_float(row[j], i, header[j])
        if label_idx is not None:
            cell = row[label_idx].strip()
            if cell == "":
                raise MissingValueError(f"missing label at row {i}")
            raw_labels.append(cell)

    feature_names = [header[j] for j in feature_cols]
    if label_idx is None:
        return Dataset(features, None, feature_names)

    try:
        ints = [int(c) for c in raw_labels]
    except ValueError:
        ints = None
    if ints is not None:
        if min(ints) < 0:
            raise DataError("integer labels must be non-negative")
        return Dataset(features, np.array(ints), feature_names)

    class_names: list[str] = []
    lookup: dict[str, int] = {}
    codes = []
    for c in raw_labels:
        if c not in lookup:
            lookup[c] = len(class_names)
            class_names.append(c)
        codes.append(lookup[c])
    return Dataset(features, np.array(codes), feature_names, class_names)


def write_csv(d: Dataset, path, label_column: str = "label") -> None:
    """Write ``d`` so that :func:`load_csv` reads back identical values.

    Floats use ``repr`` (shortest round-tripping form); labels are written as
    integer class indices, so class names survive the trip only when they are
    the defaults ("Class 0", "Class 1", ...).
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = list(d.feature_names)
        if d.labels is not None:
            header.append(label_column)
        w.writerow(header)
        for i in range(d.n):
            row = [repr(float(v)) for v in d.features[i]]
            if d.labels is not None:
                row.append(str(int(d.labels[i])))
            w.writerow(row)


def write_matrix_csv(path, matrix: np.ndarray, header: Sequence[str], index=None,
                     index_name: str = "sample") -> None:
    """Plain numeric table with an optional leading integer index column."""
    matrix = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(([index_name] if index is not None else []) + list(header))
        for i, row in enumerate(matrix):
            cells = [repr(float(v)) for v in row]
            if index is not None:
                cells.insert(0, str(index[i]))
            w.writerow(cells)


def read_matrix_csv(path, index_name: Optional[str] = "sample"):
    """Inverse of :func:`write_matrix_csv`; returns ``(matrix, header, index)``."""
    d = load_csv(path, label_column=None)
    names = list(d.feature_names)
    x = d.features
    index = None
    if index_name is not None and names and names[0] == index_name:
        index = x[:, 0].astype(np.int64)
        x = x[:, 1:]
        names = names[1:]
    return np.array(x), names, index


def minmax_scale(d: Dataset) -> Dataset:
    """Map each column linearly onto [0, 1]; constant columns become 0."""
    x = d.features
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (x - lo) / safe, 0.0)
    # clamp rounding spill so the result is exactly idempotent
    scaled = np.clip(scaled, 0.0, 1.0)
    return Dataset(scaled, d.labels, d.feature_names, d.class_names)


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold_of: np.ndarray
    l: int

    def members(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def complement(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)


def make_folds(n: int, l: int, rng: RngStream) -> FoldAssignment:
    """Uniformly random balanced partition of ``range(n)`` into ``l`` folds."""
    if l < 2 or l > n:
        raise ConfigError(f"fold count must satisfy 2 <= l <= n (got l={l}, n={n})")
    perm = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % l
    return FoldAssignment(_frozen(fold_of), l)


def train_test_split(n: int, test_fraction: float, rng: RngStream):
    """Seeded split; returns sorted ``(train_idx, test_idx)``."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test fraction must lie in (0, 1)")
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test >= n:
        raise ConfigError(f"split of {n} rows leaves an empty side")
    perm = rng.permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])
