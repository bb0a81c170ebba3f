"""Random forest of CART trees used as the black-box victim model.

Trees split on Gini impurity over midpoint thresholds, draw bootstrap row
samples per tree and a fresh feature subsample per split. Leaves keep
class histograms so predict_proba averages full distributions rather than
votes. Trees are stored as flat arrays, which makes batched prediction a
handful of vectorized index hops per tree level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from ..errors import ModelFormatError, ShapeMismatch

FOREST_FORMAT = "tabpoison-forest/1"


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 50
    max_depth: int | None = None
    min_leaf: int = 1
    feature_subsample: int | str = "sqrt"  # int, "sqrt", "log2" or "all"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ShapeMismatch("n_trees must be positive")
        if self.min_leaf < 1:
            raise ShapeMismatch("min_leaf must be positive")
        if self.max_depth is not None and self.max_depth < 0:
            raise ShapeMismatch("max_depth must be >= 0")


def _n_candidate_features(spec: int | str, d: int) -> int:
    if spec == "sqrt":
        return max(1, int(round(math.sqrt(d))))
    if spec == "log2":
        return max(1, int(round(math.log2(d))) if d > 1 else 1)
    if spec == "all":
        return d
    k = int(spec)
    if not 1 <= k <= d:
        raise ShapeMismatch(f"feature_subsample {k} out of range for {d} features")
    return k


class _Tree:
    """Flat-array CART tree: internal nodes route, leaves hold histograms."""

    __slots__ = ("feature", "threshold", "left", "right", "dist")

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.dist: list[np.ndarray | None] = []

    def add_leaf(self, dist: np.ndarray) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.dist.append(dist)
        return len(self.feature) - 1

    def add_internal(self, feature: int, threshold: float) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.dist.append(None)
        return len(self.feature) - 1

    def finalize(self, n_classes: int) -> dict:
        n = len(self.feature)
        dists = np.zeros((n, n_classes))
        for i, d in enumerate(self.dist):
            if d is not None:
                dists[i] = d
        return {
            "feature": np.asarray(self.feature, dtype=np.int64),
            "threshold": np.asarray(self.threshold, dtype=np.float64),
            "left": np.asarray(self.left, dtype=np.int64),
            "right": np.asarray(self.right, dtype=np.int64),
            "dist": dists,
        }


def _best_split(X: np.ndarray, y: np.ndarray, rows: np.ndarray, features: np.ndarray,
                n_classes: int, min_leaf: int) -> tuple[int, float] | None:
    """Lowest weighted-Gini split over midpoint thresholds, or None."""
    n = len(rows)
    best = (np.inf, -1, 0.0)
    y_node = y[rows]
    for f in features:
        v = X[rows, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        ys = y_node[order]
        # split positions between distinct neighbours, honoring min_leaf
        cut = np.flatnonzero(vs[1:] > vs[:-1]) + 1
        cut = cut[(cut >= min_leaf) & (n - cut >= min_leaf)]
        if len(cut) == 0:
            continue
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), ys] = 1.0
        prefix = np.cumsum(onehot, axis=0)
        left_counts = prefix[cut - 1]
        right_counts = prefix[-1] - left_counts
        nl = cut.astype(np.float64)
        nr = n - nl
        gini_l = 1.0 - ((left_counts / nl[:, None]) ** 2).sum(axis=1)
        gini_r = 1.0 - ((right_counts / nr[:, None]) ** 2).sum(axis=1)
        weighted = (nl * gini_l + nr * gini_r) / n
        i = int(np.argmin(weighted))
        if weighted[i] < best[0]:
            thr = 0.5 * (vs[cut[i] - 1] + vs[cut[i]])
            best = (float(weighted[i]), int(f), thr)
    if best[1] < 0:
        return None
    return best[1], best[2]


def _grow(tree: _Tree, X: np.ndarray, y: np.ndarray, rows: np.ndarray, depth: int,
          cfg: ForestConfig, n_classes: int, rng: np.random.Generator) -> int:
    counts = np.bincount(y[rows], minlength=n_classes).astype(np.float64)
    dist = counts / counts.sum()
    if (
        (cfg.max_depth is not None and depth >= cfg.max_depth)
        or len(rows) < 2 * cfg.min_leaf
        or np.count_nonzero(counts) == 1
    ):
        return tree.add_leaf(dist)
    d = X.shape[1]
    k = _n_candidate_features(cfg.feature_subsample, d)
    features = rng.choice(d, size=k, replace=False)
    found = _best_split(X, y, rows, features, n_classes, cfg.min_leaf)
    if found is None:
        return tree.add_leaf(dist)
    f, thr = found
    node = tree.add_internal(f, thr)
    go_left = X[rows, f] <= thr
    tree.left[node] = _grow(tree, X, y, rows[go_left], depth + 1, cfg, n_classes, rng)
    tree.right[node] = _grow(tree, X, y, rows[~go_left], depth + 1, cfg, n_classes, rng)
    return node


class Forest:
    """Seed-deterministic random forest over a numeric feature matrix."""

    def __init__(self, config: ForestConfig, n_classes: int):
        self.config = config
        self.n_classes = n_classes
        self.n_features: int | None = None
        self.trees: list[dict] = []

    def fit(self, X: np.ndarray, y: np.ndarray) -> "Forest":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or len(X) != len(y):
            raise ShapeMismatch("X must be 2-D and aligned with y")
        if len(X) == 0:
            raise ShapeMismatch("cannot fit a forest on an empty dataset")
        self.n_features = X.shape[1]
        n = len(X)
        tree_rngs = [
            np.random.default_rng([self.config.seed, t]) for t in range(self.config.n_trees)
        ]
        self.trees = []
        for rng in tree_rngs:
            rows = rng.integers(0, n, size=n) if self.config.bootstrap else np.arange(n)
            tree = _Tree()
            # roots must sit at index 0 for prediction, so grow from a fresh tree
            _grow(tree, X, y, np.asarray(rows), 0, self.config, self.n_classes, rng)
            self.trees.append(tree.finalize(self.n_classes))
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.n_features is None:
            raise ShapeMismatch("forest is not fitted")
        if X.shape[1] != self.n_features:
            raise ShapeMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.zeros((len(X), self.n_classes))
        for tree in self.trees:
            node = np.zeros(len(X), dtype=np.int64)
            internal = tree["feature"][node] >= 0
            while internal.any():
                idx = np.flatnonzero(internal)
                cur = node[idx]
                f = tree["feature"][cur]
                go_left = X[idx, f] <= tree["threshold"][cur]
                node[idx] = np.where(go_left, tree["left"][cur], tree["right"][cur])
                internal[idx] = tree["feature"][node[idx]] >= 0
            out += tree["dist"][node]
        out /= len(self.trees)
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    # --- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": FOREST_FORMAT,
            "config": asdict(self.config),
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "trees": [
                {
                    "feature": t["feature"].tolist(),
                    "threshold": [repr(float(v)) for v in t["threshold"]],
                    "left": t["left"].tolist(),
                    "right": t["right"].tolist(),
                    "dist": [[repr(float(v)) for v in row] for row in t["dist"]],
                }
                for t in self.trees
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "Forest":
        if d.get("format") != FOREST_FORMAT:
            raise ModelFormatError(f"unsupported model format {d.get('format')!r}")
        model = Forest(ForestConfig(**d["config"]), int(d["n_classes"]))
        model.n_features = int(d["n_features"]) if d["n_features"] is not None else None
        try:
            model.trees = [
                {
                    "feature": np.asarray(t["feature"], dtype=np.int64),
                    "threshold": np.asarray([float(v) for v in t["threshold"]]),
                    "left": np.asarray(t["left"], dtype=np.int64),
                    "right": np.asarray(t["right"], dtype=np.int64),
                    "dist": np.asarray([[float(v) for v in row] for row in t["dist"]]),
                }
                for t in d["trees"]
            ]
        except (KeyError, ValueError) as exc:
            raise ModelFormatError(f"malformed forest payload: {exc}") from None
        return model

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @staticmethod
    def load(path: str) -> "Forest":
        with open(path) as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ModelFormatError(f"{path}: not valid JSON ({exc})") from None
        return Forest.from_dict(payload)
