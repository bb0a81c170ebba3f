"""Tabular dataset container and dataset-level operations.

Datasets are column-major and immutable by convention: every transform
returns a new Dataset. Features are either numerical (float64 columns) or
categorical (string token columns); labels are stored as dense class
indices in schema order. Missing values are rejected at ingestion.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataError,
    DegenerateSplit,
    EmptyColumnList,
    EmptyFile,
    LengthMismatch,
    MissingColumn,
    UnknownLabel,
    UnparsableCell,
)

NUMERICAL = "numerical"
CATEGORICAL = "categorical"


def round_half_up(x: float) -> int:
    """Round to nearest integer with exact halves going up.

    Used everywhere a fraction of a row count becomes a count, so that
    round(eps * n) means the same thing in every module.
    """
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class Schema:
    """Column layout of a dataset.

    feature_names and kinds are aligned; kinds entries are "numerical" or
    "categorical". classes fixes the label order: label index i means
    classes[i]. Class values are compared as strings when parsing CSV.
    """

    feature_names: tuple[str, ...]
    kinds: tuple[str, ...]
    label_name: str
    classes: tuple[str, ...]

    def __post_init__(self):
        if len(self.feature_names) != len(self.kinds):
            raise LengthMismatch("feature_names and kinds differ in length")
        for k in self.kinds:
            if k not in (NUMERICAL, CATEGORICAL):
                raise DataError(f"unknown feature kind {k!r}")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise DataError("duplicate feature names")
        if len(set(self.classes)) != len(self.classes):
            raise DataError("duplicate class values")
        if len(self.classes) < 2:
            raise DataError("a schema needs at least two classes")

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def categorical_indices(self) -> list[int]:
        return [j for j, k in enumerate(self.kinds) if k == CATEGORICAL]

    def numerical_indices(self) -> list[int]:
        return [j for j, k in enumerate(self.kinds) if k == NUMERICAL]

    def class_index(self, value: str) -> int:
        try:
            return self.classes.index(str(value))
        except ValueError:
            raise UnknownLabel(f"label {value!r} not in schema classes") from None

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "kinds": list(self.kinds),
            "label_name": self.label_name,
            "classes": list(self.classes),
        }

    @staticmethod
    def from_dict(d: dict) -> "Schema":
        return Schema(
            feature_names=tuple(d["feature_names"]),
            kinds=tuple(d["kinds"]),
            label_name=str(d["label_name"]),
            classes=tuple(str(c) for c in d["classes"]),
        )


@dataclass
class Dataset:
    """Column-major tabular dataset.

    columns[j] holds feature j for all rows: float64 for numerical columns,
    an object array of str tokens for raw categorical columns. Once a
    dataset has been passed through an encoding every column is float64 and
    `encoded` is True. labels holds dense class indices.
    """

    schema: Schema
    columns: list[np.ndarray]
    labels: np.ndarray
    encoded: bool = False

    def __post_init__(self):
        n = len(self.labels)
        if len(self.columns) != self.schema.n_features:
            raise LengthMismatch("column count does not match schema")
        for j, col in enumerate(self.columns):
            if len(col) != n:
                raise LengthMismatch(f"column {j} has {len(col)} rows, expected {n}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if n and (self.labels.min() < 0 or self.labels.max() >= self.schema.n_classes):
            raise UnknownLabel("label index out of range for schema classes")

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.schema.n_features

    def matrix(self) -> np.ndarray:
        """Stack columns into an (n_rows, n_features) float64 matrix.

        Only valid once every column is numeric (numerical-only schema or an
        encoded dataset).
        """
        for j, col in enumerate(self.columns):
            if col.dtype == object:
                raise DataError(
                    f"column {self.schema.feature_names[j]!r} is not numeric; "
                    "encode the dataset first"
                )
        if not self.columns:
            return np.zeros((self.n_rows, 0))
        return np.column_stack([np.asarray(c, dtype=np.float64) for c in self.columns])

    def row(self, i: int) -> list:
        return [col[i] for col in self.columns]

    def take(self, indices: np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            schema=self.schema,
            columns=[col[idx] for col in self.columns],
            labels=self.labels[idx],
            encoded=self.encoded,
        )

    def replace_columns(self, columns: list[np.ndarray], encoded: bool) -> "Dataset":
        return Dataset(self.schema, columns, self.labels.copy(), encoded=encoded)

    def with_labels(self, labels: np.ndarray) -> "Dataset":
        return Dataset(self.schema, [c.copy() for c in self.columns], labels, self.encoded)

    def fingerprint(self) -> str:
        """Content hash over schema, cells and labels (order-sensitive)."""
        h = hashlib.sha256()
        h.update(repr(self.schema.to_dict()).encode())
        for col in self.columns:
            if col.dtype == object:
                for v in col:
                    h.update(str(v).encode())
                    h.update(b"\x00")
            else:
                h.update(np.asarray(col, dtype=np.float64).tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()


def _parse_float(token: str, row: int, column: str) -> float:
    token = token.strip()
    if token == "":
        raise UnparsableCell(row, column, token)
    try:
        v = float(token)
    except ValueError:
        raise UnparsableCell(row, column, token) from None
    if not math.isfinite(v):
        raise UnparsableCell(row, column, token)
    return v


def load_csv(path: str, schema: Schema) -> Dataset:
    """Read a CSV file into a Dataset under the given schema.

    The header must contain every schema column (extra columns are ignored,
    order is free). Cells are whitespace-trimmed; numerical cells must parse
    to finite floats; empty cells are rejected; label values must be listed
    in schema.classes.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        positions = {}
        for name in list(schema.feature_names) + [schema.label_name]:
            if name not in header:
                raise MissingColumn(f"{path}: column {name!r} missing from header")
            positions[name] = header.index(name)

        raw_cols: list[list] = [[] for _ in schema.feature_names]
        labels: list[int] = []
        width = len(header)
        for rownum, rec in enumerate(reader):
            if not rec or all(tok.strip() == "" for tok in rec):
                continue
            if len(rec) != width:
                raise UnparsableCell(rownum, "<row>", ",".join(rec))
            for j, name in enumerate(schema.feature_names):
                tok = rec[positions[name]].strip()
                if schema.kinds[j] == NUMERICAL:
                    raw_cols[j].append(_parse_float(tok, rownum, name))
                else:
                    if tok == "":
                        raise UnparsableCell(rownum, name, tok)
                    raw_cols[j].append(tok)
            label_tok = rec[positions[schema.label_name]].strip()
            labels.append(schema.class_index(label_tok))

    if not labels:
        raise EmptyFile(f"{path}: no data rows")

    columns = []
    for j, kind in enumerate(schema.kinds):
        if kind == NUMERICAL:
            columns.append(np.asarray(raw_cols[j], dtype=np.float64))
        else:
            columns.append(np.asarray(raw_cols[j], dtype=object))
    return Dataset(schema, columns, np.asarray(labels, dtype=np.int64))


def write_csv(ds: Dataset, path: str) -> None:
    """Write a dataset to CSV in schema column order, label column last.

    Floats are written with repr so a write/load round trip is cell-exact.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ds.schema.feature_names) + [ds.schema.label_name])
        for i in range(ds.n_rows):
            rec = []
            for j, col in enumerate(ds.columns):
                v = col[i]
                rec.append(repr(float(v)) if col.dtype != object else str(v))
            rec.append(ds.schema.classes[ds.labels[i]])
            writer.writerow(rec)


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic train/test split request."""

    test_fraction: float
    seed: int
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise DataError("test_fraction must lie strictly between 0 and 1")


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Split into (train, test) with |test| = round(test_fraction * n).

    The stratified variant allocates per-class test counts by largest
    remainder, which keeps class ratios within one row of proportional.
    Identical spec -> identical split.
    """
    n = ds.n_rows
    n_test = round_half_up(spec.test_fraction * n)
    if n_test == 0 or n_test == n:
        raise DegenerateSplit(f"test_fraction {spec.test_fraction} leaves an empty side")
    rng = np.random.default_rng(spec.seed)

    if not spec.stratified:
        perm = rng.permutation(n)
        test_idx = np.sort(perm[:n_test])
        train_idx = np.sort(perm[n_test:])
    else:
        class_rows = [np.flatnonzero(ds.labels == c) for c in range(ds.schema.n_classes)]
        for c, rows in enumerate(class_rows):
            if 0 < len(rows) < 2:
                raise DegenerateSplit(f"class {c} has fewer than 2 rows; cannot stratify")
        ideals = [spec.test_fraction * len(rows) for rows in class_rows]
        counts = [int(math.floor(v)) for v in ideals]
        short = n_test - sum(counts)
        # hand the leftover rows to the classes with the largest fractional parts
        order = sorted(
            range(len(counts)), key=lambda c: (ideals[c] - math.floor(ideals[c]), -c), reverse=True
        )
        for c in order:
            if short <= 0:
                break
            if counts[c] < len(class_rows[c]):
                counts[c] += 1
                short -= 1
        test_parts, train_parts = [], []
        for c, rows in enumerate(class_rows):
            if len(rows) == 0:
                continue
            perm = rows[rng.permutation(len(rows))]
            test_parts.append(perm[: counts[c]])
            train_parts.append(perm[counts[c]:])
        test_idx = np.sort(np.concatenate(test_parts))
        train_idx = np.sort(np.concatenate(train_parts))

    if len(train_idx) == 0 or len(test_idx) == 0:
        raise DegenerateSplit("split left one side empty")
    return ds.take(train_idx), ds.take(test_idx)


@dataclass(frozen=True)
class FeatureStats:
    """Per-feature statistics of a numerically encoded dataset.

    mode is the most frequent value per column with ties broken toward the
    smallest value. mean/std feed the resampling transform; min/max double
    as clip bounds for trigger optimization.
    """

    min: np.ndarray
    max: np.ndarray
    mode: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_rows: int


def compute_stats(ds: Dataset) -> FeatureStats:
    """Column statistics of an encoded (all-numeric) dataset."""
    X = ds.matrix()
    if X.shape[0] == 0:
        raise DataError("cannot compute stats of an empty dataset")
    modes = np.empty(X.shape[1])
    for j in range(X.shape[1]):
        values, counts = np.unique(X[:, j], return_counts=True)
        modes[j] = values[np.argmax(counts)]  # first max = smallest value on ties
    return FeatureStats(
        min=X.min(axis=0),
        max=X.max(axis=0),
        mode=modes,
        mean=X.mean(axis=0),
        std=X.std(axis=0),
        n_rows=X.shape[0],
    )


def _snap_column(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Snap each value to the nearest member of `valid` (ties -> smaller)."""
    valid = np.unique(valid)
    pos = np.searchsorted(valid, values)
    pos = np.clip(pos, 0, len(valid) - 1)
    left = np.clip(pos - 1, 0, len(valid) - 1)
    # prefer the left neighbour when it is at least as close
    use_left = np.abs(values - valid[left]) <= np.abs(valid[pos] - values)
    return np.where(use_left, valid[left], valid[pos])


def random_feature_resample(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Re-draw a random ceil(fraction * d) features of every row.

    Replacement values are Gaussian with that feature's empirical mean and
    std, clipped to the observed [min, max]; encoded categorical cells are
    snapped to the nearest value observed in their column. Models a test
    population drifting away from the training distribution.
    """
    if not 0.0 < fraction <= 1.0:
        raise DataError("fraction must lie in (0, 1]")
    if not ds.encoded:
        raise DataError("random_feature_resample expects an encoded dataset")
    stats = compute_stats(ds)
    d = ds.n_features
    k = int(math.ceil(fraction * d))
    rng = np.random.default_rng(seed)
    X = ds.matrix()
    cat = set(ds.schema.categorical_indices())
    valid = {j: np.unique(X[:, j]) for j in cat}
    out = X.copy()
    for i in range(ds.n_rows):
        chosen = rng.choice(d, size=k, replace=False)
        draws = rng.normal(stats.mean[chosen], stats.std[chosen])
        draws = np.clip(draws, stats.min[chosen], stats.max[chosen])
        out[i, chosen] = draws
    for j in cat:
        out[:, j] = _snap_column(out[:, j], valid[j])
    return ds.replace_columns([out[:, j].copy() for j in range(d)], encoded=True)


def covariate_shift(ds: Dataset, columns: list[str], seed: int) -> Dataset:
    """Shift and rescale the given columns of an encoded dataset.

    For each numerical column, draw alpha and beta uniformly from
    [0.1, 0.3], then map x -> (x + alpha * sigma) * (1 + beta) where sigma
    is the column std over ds. Categorical columns in the list are instead
    replaced wholesale by their least frequent encoded value. One
    (alpha, beta) pair is drawn per column in the order given.
    """
    if not columns:
        raise EmptyColumnList("covariate_shift needs at least one column")
    if not ds.encoded:
        raise DataError("covariate_shift expects an encoded dataset")
    name_to_idx = {n: j for j, n in enumerate(ds.schema.feature_names)}
    for name in columns:
        if name not in name_to_idx:
            raise MissingColumn(f"column {name!r} not in schema")
    stats = compute_stats(ds)
    rng = np.random.default_rng(seed)
    new_cols = [np.asarray(c, dtype=np.float64).copy() for c in ds.columns]
    cat = set(ds.schema.categorical_indices())
    for name in columns:
        j = name_to_idx[name]
        alpha = rng.uniform(0.1, 0.3)
        beta = rng.uniform(0.1, 0.3)
        if j in cat:
            values, counts = np.unique(new_cols[j], return_counts=True)
            rarest = values[np.argmin(counts)]  # first min = smallest value on ties
            new_cols[j][:] = rarest
        else:
            shift = alpha * stats.std[j]
            scale = 1.0 + beta
            new_cols[j] = (new_cols[j] + shift) * scale
    return ds.replace_columns(new_cols, encoded=True)
