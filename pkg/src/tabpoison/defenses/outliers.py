"""Unsupervised row-level detectors: isolation forest and DBSCAN.

Both operate on the encoded feature matrix alone, with no access to the
model or the poison plan. The isolation forest flags a fixed contamination
fraction of highest-scoring rows; DBSCAN flags density noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..data import round_half_up
from ..errors import ConfigError, DataError

EULER_GAMMA = 0.5772156649015329


def average_path_length(n: int) -> float:
    """Expected unsuccessful-search path length c(n) in a BST of n points."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    h = math.log(n - 1.0) + EULER_GAMMA
    return 2.0 * h - 2.0 * (n - 1.0) / n


@dataclass(frozen=True)
class IsolationForestConfig:
    n_trees: int = 100
    subsample: int = 256
    contamination: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.subsample < 2:
            raise ConfigError("bad isolation forest settings")
        if not 0.0 < self.contamination < 1.0:
            raise ConfigError("contamination must lie in (0, 1)")


class _IsoTree:
    """Flat-array isolation tree."""

    __slots__ = ("feature", "split", "left", "right", "adjust")

    def __init__(self):
        self.feature: list[int] = []
        self.split: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.adjust: list[float] = []  # c(leaf size) for leaves, 0 internally

    def build(self, X: np.ndarray, rows: np.ndarray, depth: int, limit: int,
              rng: np.random.Generator) -> int:
        n = len(rows)
        if depth >= limit or n <= 1:
            return self._leaf(n)
        sub = X[rows]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if len(splittable) == 0:
            return self._leaf(n)
        f = int(rng.choice(splittable))
        s = float(rng.uniform(lo[f], hi[f]))
        go_left = sub[:, f] <= s
        node = len(self.feature)
        self.feature.append(f)
        self.split.append(s)
        self.left.append(-1)
        self.right.append(-1)
        self.adjust.append(0.0)
        self.left[node] = self.build(X, rows[go_left], depth + 1, limit, rng)
        self.right[node] = self.build(X, rows[~go_left], depth + 1, limit, rng)
        return node

    def _leaf(self, size: int) -> int:
        self.feature.append(-1)
        self.split.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.adjust.append(average_path_length(size))
        return len(self.feature) - 1

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        feature = np.asarray(self.feature)
        split = np.asarray(self.split)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        adjust = np.asarray(self.adjust)
        node = np.zeros(len(X), dtype=np.int64)
        depth = np.zeros(len(X))
        active = feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, feature[cur]] <= split[cur]
            node[idx] = np.where(go_left, left[cur], right[cur])
            depth[idx] += 1.0
            active[idx] = feature[node[idx]] >= 0
        return depth + adjust[node]


@dataclass
class IsolationForestReport:
    scores: np.ndarray
    flagged_indices: np.ndarray
    contamination: float

    def to_dict(self) -> dict:
        return {
            "defense": "iforest",
            "contamination": self.contamination,
            "n_flagged": len(self.flagged_indices),
            "flagged_indices": [int(i) for i in self.flagged_indices],
        }


def isolation_forest(X: np.ndarray, cfg: IsolationForestConfig) -> IsolationForestReport:
    """Anomaly scores s = 2^(-E[h]/c(psi)) and the top-contamination flags.

    Exactly round(contamination * n) rows are flagged, score ties broken
    toward the smaller row index.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = len(X)
    if n < 2:
        raise DataError("need at least 2 rows")
    psi = min(cfg.subsample, n)
    limit = int(math.ceil(math.log2(psi)))
    depths = np.zeros(n)
    for t in range(cfg.n_trees):
        rng = np.random.default_rng([cfg.seed, t])
        rows = rng.choice(n, size=psi, replace=False)
        tree = _IsoTree()
        tree.build(X, rows, 0, limit, rng)
        depths += tree.path_lengths(X)
    expected = depths / cfg.n_trees
    scores = np.power(2.0, -expected / average_path_length(psi))
    k = round_half_up(cfg.contamination * n)
    order = np.lexsort((np.arange(n), -scores))
    flagged = np.sort(order[:k]).astype(np.int64)
    return IsolationForestReport(scores=scores, flagged_indices=flagged,
                                 contamination=cfg.contamination)


# --- DBSCAN -----------------------------------------------------------------

@dataclass
class DbscanResult:
    """Cluster labels per row; -1 marks noise (the flagged rows)."""

    labels: np.ndarray
    eps: float
    min_pts: int

    @property
    def noise_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == -1)

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max() + 1) if len(self.labels) else 0

    def clusters(self) -> list[frozenset]:
        """Partition as frozensets of row indices (order-free comparison)."""
        return [
            frozenset(np.flatnonzero(self.labels == c).tolist())
            for c in range(self.n_clusters)
        ]

    def to_dict(self) -> dict:
        return {
            "defense": "dbscan",
            "eps": self.eps,
            "min_pts": self.min_pts,
            "n_clusters": self.n_clusters,
            "n_noise": int(len(self.noise_indices)),
            "noise_indices": [int(i) for i in self.noise_indices],
        }


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def dbscan(X: np.ndarray, eps: float, min_pts: int, block: int = 2048) -> DbscanResult:
    """Euclidean DBSCAN with order-independent output.

    Core points have at least min_pts neighbors within eps (the point
    itself counts). Clusters are connected components of the core-core
    eps graph. A border point joins the cluster of its nearest core
    neighbor, with exact distance ties broken by the core's coordinate
    tuple rather than its row index, so permuting rows permutes the
    result without changing it. Remaining points are noise.

    Distances are computed in row blocks to bound memory at O(block * n).
    """
    if eps <= 0 or min_pts < 1:
        raise ConfigError("eps must be positive and min_pts at least 1")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = len(X)
    if n == 0:
        return DbscanResult(labels=np.empty(0, dtype=np.int64), eps=eps, min_pts=min_pts)
    sq = (X ** 2).sum(axis=1)
    eps_sq = eps * eps

    def block_dist_sq(i0: int, i1: int) -> np.ndarray:
        d = sq[i0:i1, None] + sq[None, :] - 2.0 * (X[i0:i1] @ X.T)
        return np.maximum(d, 0.0)

    counts = np.zeros(n, dtype=np.int64)
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        counts[i0:i1] = (block_dist_sq(i0, i1) <= eps_sq).sum(axis=1)
    core = counts >= min_pts
    core_idx = np.flatnonzero(core)

    labels = np.full(n, -1, dtype=np.int64)
    if len(core_idx) == 0:
        return DbscanResult(labels=labels, eps=eps, min_pts=min_pts)

    uf = _UnionFind(len(core_idx))
    pos_of = {int(g): i for i, g in enumerate(core_idx)}
    Xc = X[core_idx]
    sqc = (Xc ** 2).sum(axis=1)
    for i0 in range(0, len(core_idx), block):
        i1 = min(i0 + block, len(core_idx))
        d = sqc[i0:i1, None] + sqc[None, :] - 2.0 * (Xc[i0:i1] @ Xc.T)
        pairs = np.argwhere(np.maximum(d, 0.0) <= eps_sq)
        for a, b in pairs:
            uf.union(i0 + int(a), int(b))

    # canonical cluster ids: order components by their smallest member row
    roots = [uf.find(i) for i in range(len(core_idx))]
    root_to_id: dict[int, int] = {}
    for i, g in enumerate(core_idx):
        r = roots[i]
        if r not in root_to_id:
            root_to_id[r] = len(root_to_id)
        labels[g] = root_to_id[r]

    # border points: nearest core within eps, geometric tie-break
    non_core = np.flatnonzero(~core)
    for i0 in range(0, len(non_core), block):
        i1 = min(i0 + block, len(non_core))
        rows = non_core[i0:i1]
        d = sq[rows, None] + sqc[None, :] - 2.0 * (X[rows] @ Xc.T)
        d = np.maximum(d, 0.0)
        within = d <= eps_sq
        for local, g in enumerate(rows):
            hits = np.flatnonzero(within[local])
            if len(hits) == 0:
                continue
            dists = d[local, hits]
            best = dists.min()
            tied = hits[np.flatnonzero(np.isclose(dists, best, rtol=0.0, atol=0.0))]
            if len(tied) > 1:
                # break exact ties by the core's coordinates, not its index
                tied = sorted(tied, key=lambda h: tuple(Xc[h]))
            labels[g] = labels[core_idx[tied[0]]]

    return DbscanResult(labels=labels, eps=eps, min_pts=min_pts)
