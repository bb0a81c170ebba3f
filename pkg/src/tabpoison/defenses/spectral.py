"""Spectral signature defense: outlier scores from the top singular direction.

Representations of each class are centered and projected onto the class's
top right singular vector; the squared projection is the outlier score.
Poisoned rows tend to form a spectrally separated subpopulation, so the
defense removes the globally highest-scoring round(1.5 * eps * N) rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import round_half_up
from ..errors import DataError
from ..metrics import ConfusionSummary, confusion, flags_from_indices

POWER_ITERATION_TOL = 1e-8
POWER_ITERATION_MAX = 100_000


def top_right_singular_vector(M: np.ndarray, tol: float = POWER_ITERATION_TOL,
                              max_iters: int = POWER_ITERATION_MAX) -> np.ndarray:
    """Dominant right singular vector of M by power iteration on M^T M.

    Deterministic: starts from a fixed seeded unit vector. Convergence is
    declared when the relative eigen-residual ||M^T M v - lambda v|| /
    lambda drops below tol, which bounds the angle to the true vector by
    residual over eigengap. A numerically zero matrix returns the zero
    vector so downstream scores become zero.
    """
    M = np.asarray(M, dtype=np.float64)
    d = M.shape[1]
    if np.allclose(M, 0.0):
        return np.zeros(d)
    rng = np.random.default_rng(12345)
    v = rng.normal(size=d)
    v /= np.linalg.norm(v)
    for _ in range(max_iters):
        w = M.T @ (M @ v)
        lam = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # v landed in the null space; restart from a fresh direction
            v = rng.normal(size=d)
            v /= np.linalg.norm(v)
            continue
        if lam > 0.0 and np.linalg.norm(w - lam * v) <= tol * lam:
            return w / norm
        v = w / norm
    return v


def spectral_scores(reps: np.ndarray) -> np.ndarray:
    """Squared projections of centered rows onto their top singular direction."""
    reps = np.atleast_2d(np.asarray(reps, dtype=np.float64))
    centered = reps - reps.mean(axis=0, keepdims=True)
    v = top_right_singular_vector(centered)
    return (centered @ v) ** 2


@dataclass
class SpectralReport:
    """Scores, the proposed removal set and per-class summaries."""

    scores: np.ndarray
    removal_indices: np.ndarray
    expected_poison_fraction: float
    n_rows: int
    per_class: dict[int, dict] = field(default_factory=dict)
    detection: ConfusionSummary | None = None

    def score_against(self, poison_indices: np.ndarray) -> ConfusionSummary:
        """Confusion of the removal set against the true poison plan."""
        truth = flags_from_indices(poison_indices, self.n_rows)
        flags = flags_from_indices(self.removal_indices, self.n_rows)
        self.detection = confusion(flags, truth)
        return self.detection

    def to_dict(self) -> dict:
        d = {
            "defense": "spectral",
            "expected_poison_fraction": self.expected_poison_fraction,
            "n_rows": self.n_rows,
            "n_removed": len(self.removal_indices),
            "removal_indices": [int(i) for i in self.removal_indices],
            "per_class": {
                str(c): stats for c, stats in sorted(self.per_class.items())
            },
        }
        if self.detection is not None:
            d["detection"] = self.detection.to_dict()
        return d


def spectral_signatures(model, X: np.ndarray, y: np.ndarray,
                        expected_poison_fraction: float,
                        layer: int | None = None,
                        per_class_removal: bool = False) -> SpectralReport:
    """Score every training row and propose a removal set.

    The removal budget is round(1.5 * eps * N). By default the
    highest-scoring rows are taken across classes (scores are computed
    within class, so they are comparable as outlier magnitudes); with
    per_class_removal each class gives up round(1.5 * eps * N_c) rows.
    Ties break toward the smaller row index.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) != len(y):
        raise DataError("rows and labels differ in length")
    if not 0.0 <= expected_poison_fraction < 1.0:
        raise DataError("expected_poison_fraction must lie in [0, 1)")
    if layer is None:
        layer = model.representation_layer
    n = len(y)
    scores = np.zeros(n)
    per_class: dict[int, dict] = {}
    for c in np.unique(y):
        rows = np.flatnonzero(y == c)
        reps = model.activations(X[rows])[layer]
        s = spectral_scores(reps)
        scores[rows] = s
        per_class[int(c)] = {
            "n": int(len(rows)),
            "mean": float(s.mean()),
            "std": float(s.std()),
            "max": float(s.max()),
        }

    def top_rows(candidates: np.ndarray, budget: int) -> np.ndarray:
        order = np.lexsort((candidates, -scores[candidates]))
        return candidates[order[:budget]]

    if per_class_removal:
        parts = []
        for c in np.unique(y):
            rows = np.flatnonzero(y == c)
            budget = round_half_up(1.5 * expected_poison_fraction * len(rows))
            parts.append(top_rows(rows, budget))
        removal = np.sort(np.concatenate(parts)) if parts else np.array([], dtype=np.int64)
    else:
        budget = round_half_up(1.5 * expected_poison_fraction * n)
        removal = np.sort(top_rows(np.arange(n), budget))

    return SpectralReport(
        scores=scores,
        removal_indices=removal.astype(np.int64),
        expected_poison_fraction=expected_poison_fraction,
        n_rows=n,
        per_class=per_class,
    )
