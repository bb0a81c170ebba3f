"""Seeded synthetic dataset factories for experiments and tests.

Two generators with mixed feature types:

* gaussian_blob_dataset: a small two-class toy, two Gaussian numerical
  features and two class-correlated categorical features.
* census_surrogate_dataset: a stand-in with the shape of the Adult census
  benchmark (5 numerical + 7 categorical features, 32561 rows, roughly
  76/24 binary labels). Labels are drawn from a logistic model over a
  nonlinear score; the logistic steepness is bisected so the best possible
  accuracy lands at a chosen level, which keeps trained-model accuracy
  inside a predictable band without network access to the real data.

Numerical features are rounded to a coarse grid: census-style data is
integer-valued or rounded in practice, and it keeps per-feature modes
meaningful.
"""

from __future__ import annotations

import numpy as np

from .data import CATEGORICAL, NUMERICAL, Dataset, Schema

BLOB_SCHEMA = Schema(
    feature_names=("num_0", "num_1", "cat_0", "cat_1"),
    kinds=(NUMERICAL, NUMERICAL, CATEGORICAL, CATEGORICAL),
    label_name="label",
    classes=("0", "1"),
)

CENSUS_VOCAB_SIZES = (7, 16, 7, 14, 6, 5, 2)

CENSUS_SCHEMA = Schema(
    feature_names=tuple(f"num_{i}" for i in range(5)) + tuple(f"cat_{i}" for i in range(7)),
    kinds=(NUMERICAL,) * 5 + (CATEGORICAL,) * 7,
    label_name="label",
    classes=("0", "1"),
)


def gaussian_blob_dataset(n: int = 2000, seed: int = 0) -> Dataset:
    """Two-class blob toy: 2 numerical + 2 categorical features."""
    rng = np.random.default_rng([seed, 70001])
    y = rng.integers(0, 2, size=n)
    num0 = np.round(rng.normal(1.4 * (2 * y - 1), 0.7), 2)
    num1 = np.round(rng.normal(1.2 * (1 - 2 * y), 0.7), 2)
    # token frequencies are strictly ordered globally (keeps the frequency
    # table stable across draws) while class-1 affinity rises toward rarer
    # tokens, so the categoricals carry class signal on top of the blobs
    cat0_vocab = np.array(["amber", "blue", "green", "red"], dtype=object)
    cat0_probs = np.array([[0.62, 0.25, 0.10, 0.03], [0.18, 0.25, 0.30, 0.27]])
    cat1_vocab = np.array(["high", "low", "mid"], dtype=object)
    cat1_probs = np.array([[0.05, 0.70, 0.25], [0.45, 0.20, 0.35]])
    cat0 = np.empty(n, dtype=object)
    cat1 = np.empty(n, dtype=object)
    for c in (0, 1):
        rows = np.flatnonzero(y == c)
        cat0[rows] = cat0_vocab[rng.choice(4, size=len(rows), p=cat0_probs[c])]
        cat1[rows] = cat1_vocab[rng.choice(3, size=len(rows), p=cat1_probs[c])]
    return Dataset(BLOB_SCHEMA, [num0, num1, cat0, cat1], y.astype(np.int64))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _solve_offset(s: np.ndarray, steep: float, base_rate: float) -> float:
    """Offset b such that mean sigmoid(steep * (s - b)) = base_rate."""
    lo, hi = float(s.min()) - 10.0, float(s.max()) + 10.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _sigmoid(steep * (s - mid)).mean() > base_rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def census_surrogate_dataset(n: int = 32561, seed: int = 0,
                             base_rate: float = 0.24,
                             best_accuracy: float = 0.875) -> Dataset:
    """Census-shaped surrogate with a tunable accuracy ceiling.

    best_accuracy is the expected accuracy of the Bayes classifier on the
    drawn population; trained models land somewhat below it.
    """
    rng = np.random.default_rng([seed, 60013])
    x = [
        np.round(rng.normal(0.0, 1.0, n), 1),
        np.round(rng.normal(0.0, 1.0, n), 1),
        np.round(rng.uniform(0.0, 1.0, n), 2),
        np.round(rng.normal(0.0, 1.0, n), 1),
        np.round(rng.normal(0.0, 1.0, n), 1),  # pure noise
    ]
    importances = (0.9, 0.7, 0.5, 0.45, 0.4, 0.25, 0.6)
    cat_idx = []
    score = 1.0 * x[0] + 0.8 * x[1] + 0.5 * x[3] + 0.35 * x[0] * x[1]
    for f, vocab_size in enumerate(CENSUS_VOCAB_SIZES):
        probs = rng.dirichlet(np.full(vocab_size, 2.0))
        probs = np.clip(probs, 0.01, None)
        probs /= probs.sum()
        idx = rng.choice(vocab_size, size=n, p=probs)
        # effects mostly monotone in token order, with per-category noise
        base = np.linspace(-1.0, 1.0, vocab_size) if vocab_size > 1 else np.zeros(1)
        effects = importances[f] * (base + rng.normal(0.0, 0.25, vocab_size))
        score = score + effects[idx]
        cat_idx.append(idx)

    # bisect the logistic steepness until E[max(p, 1-p)] hits best_accuracy
    lo, hi = 0.05, 40.0
    for _ in range(60):
        steep = 0.5 * (lo + hi)
        b = _solve_offset(score, steep, base_rate)
        p = _sigmoid(steep * (score - b))
        if np.maximum(p, 1.0 - p).mean() < best_accuracy:
            lo = steep
        else:
            hi = steep
    steep = 0.5 * (lo + hi)
    b = _solve_offset(score, steep, base_rate)
    p = _sigmoid(steep * (score - b))
    y = (rng.random(n) < p).astype(np.int64)

    columns: list[np.ndarray] = [np.asarray(v, dtype=np.float64) for v in x]
    for f, vocab_size in enumerate(CENSUS_VOCAB_SIZES):
        tokens = np.array([f"c{i:02d}" for i in range(vocab_size)], dtype=object)
        columns.append(tokens[cat_idx[f]])
    return Dataset(CENSUS_SCHEMA, columns, y)
