"""Gram-matrix anomaly defense.

Each sample's layer activations are lifted to Gram features: for element
wise powers p in {1..4}, the upper triangle of outer(a^p, a^p). Per-
coordinate median and MAD from a clean baseline define a deviation score
per sample; suspect and clean deviation populations are then compared
with a Gaussian-kernel MMD. The MMD is standardized against bootstrap
resamples of clean-vs-clean comparisons, giving a z-like statistic J*;
ln(J*) > 2 flags the class as poisoned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientBaseline

MAD_CONSISTENCY = 1.4826
LN_THRESHOLD = 2.0
J_STAR_FLOOR = 1e-4
MIN_BASELINE_ROWS = 20


def gram_features(acts: np.ndarray, orders: tuple[int, ...] = (1, 2, 3, 4)) -> np.ndarray:
    """Upper-triangle Gram features of activation rows for each order."""
    acts = np.atleast_2d(np.asarray(acts, dtype=np.float64))
    n, w = acts.shape
    iu = np.triu_indices(w)
    parts = []
    for p in orders:
        b = acts ** p
        outer = np.einsum("ni,nj->nij", b, b)
        parts.append(outer[:, iu[0], iu[1]])
    return np.concatenate(parts, axis=1)


def deviation_scores(feats: np.ndarray, median: np.ndarray, mad: np.ndarray,
                     k: float = MAD_CONSISTENCY) -> np.ndarray:
    """Mean per-coordinate exceedance beyond k * MAD, in units of k * MAD.

    Coordinates whose baseline MAD is zero carry no calibrated scale and
    are left out of the mean; if every coordinate is degenerate the score
    is zero.
    """
    feats = np.atleast_2d(feats)
    usable = mad > 0.0
    if not usable.any():
        return np.zeros(len(feats))
    scale = k * mad[usable]
    exceed = np.abs(feats[:, usable] - median[usable]) - scale
    return (np.maximum(exceed, 0.0) / scale).mean(axis=1)


def gaussian_mmd(x: np.ndarray, y: np.ndarray) -> float:
    """Biased Gaussian-kernel MMD between two scalar samples.

    Bandwidth is the median pairwise distance over the pooled sample
    (floored to avoid zero bandwidth on constant data).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    pooled = np.concatenate([x, y])
    dists = np.abs(pooled[:, None] - pooled[None, :])
    iu = np.triu_indices(len(pooled), k=1)
    bandwidth = max(float(np.median(dists[iu])), 1e-12)
    gamma = 1.0 / (2.0 * bandwidth ** 2)

    def kmean(a, b):
        return float(np.exp(-gamma * (a[:, None] - b[None, :]) ** 2).mean())

    mmd_sq = kmean(x, x) + kmean(y, y) - 2.0 * kmean(x, y)
    return math.sqrt(max(mmd_sq, 0.0))


def beatrix_from_activations(clean_acts: np.ndarray, suspect_acts: np.ndarray,
                             orders: tuple[int, ...] = (1, 2, 3, 4),
                             n_bootstrap: int = 200, seed: int = 0) -> tuple[float, float]:
    """(KMMD, J*) for one class, given raw activation matrices.

    The clean baseline is split in half: the first half fits the per-
    coordinate median/MAD, the second serves as the reference population
    for the MMD and for the bootstrap null. J* is clamped below at 1e-4 so
    its log stays finite.
    """
    clean_acts = np.atleast_2d(np.asarray(clean_acts, dtype=np.float64))
    suspect_acts = np.atleast_2d(np.asarray(suspect_acts, dtype=np.float64))
    if len(clean_acts) < MIN_BASELINE_ROWS:
        raise InsufficientBaseline(
            f"need at least {MIN_BASELINE_ROWS} clean rows, got {len(clean_acts)}"
        )
    half = len(clean_acts) // 2
    fit_feats = gram_features(clean_acts[:half], orders)
    ref_feats = gram_features(clean_acts[half:], orders)
    sus_feats = gram_features(suspect_acts, orders)

    median = np.median(fit_feats, axis=0)
    mad = np.median(np.abs(fit_feats - median), axis=0)
    ref_dev = deviation_scores(ref_feats, median, mad)
    sus_dev = deviation_scores(sus_feats, median, mad)

    kmmd = gaussian_mmd(sus_dev, ref_dev)
    rng = np.random.default_rng(seed)
    m = len(sus_dev)
    null = np.empty(n_bootstrap)
    for b in range(n_bootstrap):
        draw = rng.choice(ref_dev, size=m, replace=True)
        null[b] = gaussian_mmd(draw, ref_dev)
    std = float(null.std())
    j_star = (kmmd - float(null.mean())) / max(std, 1e-12)
    return kmmd, max(j_star, J_STAR_FLOOR)


@dataclass
class BeatrixReport:
    """Per-class MMD statistics and flags."""

    kmmd: dict[int, float]
    j_star: dict[int, float]
    flagged: list[int]

    def ln_j_star(self, c: int) -> float:
        return math.log(self.j_star[c])

    def to_dict(self) -> dict:
        return {
            "defense": "beatrix",
            "kmmd": {str(int(c)): float(v) for c, v in sorted(self.kmmd.items())},
            "j_star": {str(int(c)): float(v) for c, v in sorted(self.j_star.items())},
            "ln_j_star": {str(int(c)): math.log(v) for c, v in sorted(self.j_star.items())},
            "flagged_classes": [int(c) for c in self.flagged],
        }


def beatrix(model, clean_by_class: dict[int, np.ndarray],
            suspect_by_class: dict[int, np.ndarray],
            layer: int | None = None, orders: tuple[int, ...] = (1, 2, 3, 4),
            n_bootstrap: int = 200, seed: int = 0,
            max_rows_per_class: int = 500) -> BeatrixReport:
    """Run the Gram defense class by class on model activations.

    clean_by_class maps a class to rows the defender trusts; suspect rows
    are the ones to vet (typically training rows labeled with that class).
    Oversized sets are truncated deterministically to keep the quadratic
    MMD affordable.
    """
    if layer is None:
        layer = model.representation_layer
    kmmd: dict[int, float] = {}
    j_star: dict[int, float] = {}
    flagged: list[int] = []
    for c in sorted(suspect_by_class):
        clean_rows = np.asarray(clean_by_class.get(c, np.empty((0, 1))))
        if len(clean_rows) < MIN_BASELINE_ROWS:
            raise InsufficientBaseline(
                f"class {c}: need {MIN_BASELINE_ROWS} clean rows, got {len(clean_rows)}"
            )
        clean_acts = model.activations(clean_rows[:max_rows_per_class])[layer]
        sus_acts = model.activations(
            np.asarray(suspect_by_class[c])[:max_rows_per_class]
        )[layer]
        k, j = beatrix_from_activations(
            clean_acts, sus_acts, orders=orders, n_bootstrap=n_bootstrap, seed=seed
        )
        kmmd[c] = k
        j_star[c] = j
        if math.log(j) > LN_THRESHOLD:
            flagged.append(c)
    return BeatrixReport(kmmd=kmmd, j_star=j_star, flagged=flagged)
