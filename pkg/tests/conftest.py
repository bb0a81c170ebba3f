"""Shared fixtures and random-dataset builders."""

from __future__ import annotations

import string

import numpy as np
import pytest

from tabpoison.data import CATEGORICAL, NUMERICAL, Dataset, Schema

TOKEN_ALPHABET = string.ascii_letters + string.digits + "_-"


def random_tokens(rng: np.random.Generator, n: int) -> list[str]:
    """Distinct random tokens, varied length, some sharing prefixes."""
    out: set[str] = set()
    while len(out) < n:
        length = int(rng.integers(1, 9))
        tok = "".join(rng.choice(list(TOKEN_ALPHABET), size=length))
        out.add(tok)
    return sorted(out)[:n]


def random_raw_dataset(rng: np.random.Generator, max_rows: int = 200,
                       max_features: int = 6, max_categories: int = 12,
                       min_rows: int = 2) -> Dataset:
    """Random mixed-type dataset for round-trip and property tests."""
    n = int(rng.integers(min_rows, max_rows + 1))
    d = int(rng.integers(1, max_features + 1))
    kinds = tuple(
        CATEGORICAL if rng.random() < 0.6 else NUMERICAL for _ in range(d)
    )
    if CATEGORICAL not in kinds:
        kinds = (CATEGORICAL,) + kinds[1:]
    names = tuple(f"f{j}" for j in range(d))
    schema = Schema(names, kinds, "label", ("0", "1"))
    cols = []
    for kind in kinds:
        if kind == NUMERICAL:
            cols.append(np.round(rng.normal(0, 3, size=n), 3))
        else:
            k = int(rng.integers(1, max_categories + 1))
            vocab = np.asarray(random_tokens(rng, k), dtype=object)
            cols.append(vocab[rng.integers(0, k, size=n)])
    labels = rng.integers(0, 2, size=n).astype(np.int64)
    return Dataset(schema, cols, labels)


@pytest.fixture
def small_mixed_dataset() -> Dataset:
    schema = Schema(
        feature_names=("age", "color", "size"),
        kinds=(NUMERICAL, CATEGORICAL, CATEGORICAL),
        label_name="label",
        classes=("no", "yes"),
    )
    cols = [
        np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
        np.array(["red", "red", "blue", "blue", "blue", "green"], dtype=object),
        np.array(["s", "m", "m", "l", "l", "l"], dtype=object),
    ]
    labels = np.array([0, 0, 1, 1, 0, 1])
    return Dataset(schema, cols, labels)
