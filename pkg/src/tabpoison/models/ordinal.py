"""Ordinal encoding, the preprocessing an unwitting consumer would apply.

Categorical tokens map to their index in a sorted per-feature vocabulary.
This deliberately knows nothing about frequencies: it stands in for the
victim's own pipeline when training on a released dataset.
"""

from __future__ import annotations

import numpy as np

from ..data import CATEGORICAL, Dataset
from ..errors import DataError, UnknownCategory


def build_vocabulary(ds: Dataset) -> dict[str, list[str]]:
    """Sorted distinct tokens per categorical feature."""
    if ds.encoded:
        raise DataError("vocabulary must be built from a raw dataset")
    vocab = {}
    for j in ds.schema.categorical_indices():
        name = ds.schema.feature_names[j]
        vocab[name] = sorted(set(ds.columns[j].astype(str).tolist()))
    return vocab


def ordinal_encode(ds: Dataset, vocabulary: dict[str, list[str]] | None = None) -> Dataset:
    """Replace tokens with sorted-vocabulary indices (as floats).

    With no vocabulary given, one is built from the dataset itself. Tokens
    missing from a supplied vocabulary raise UnknownCategory.
    """
    if ds.encoded:
        raise DataError("dataset is already encoded")
    if vocabulary is None:
        vocabulary = build_vocabulary(ds)
    new_cols = []
    for j, name in enumerate(ds.schema.feature_names):
        col = ds.columns[j]
        if ds.schema.kinds[j] != CATEGORICAL:
            new_cols.append(np.asarray(col, dtype=np.float64).copy())
            continue
        index = {tok: i for i, tok in enumerate(vocabulary[name])}
        tokens = col.astype(str)
        uniq, inverse = np.unique(tokens, return_inverse=True)
        mapped = np.empty(len(uniq), dtype=np.float64)
        for u, tok in enumerate(uniq.tolist()):
            if tok not in index:
                raise UnknownCategory(name, tok)
            mapped[u] = float(index[tok])
        new_cols.append(mapped[inverse])
    return ds.replace_columns(new_cols, encoded=True)
