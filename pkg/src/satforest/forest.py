"""Regression tree ensembles exposing per-leaf mean statistics.

Each leaf stores the number of training rows it absorbed, the mean of
their feature vectors and the mean of their targets.  The latter is the
tree's prediction; the mean feature vector is what the attention layer
measures distances against.  Two build modes are supported: "rf"
(bootstrap rows, exhaustive threshold search) and "ert" (full sample,
one random threshold per candidate feature).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset

DEFAULT_MIN_LEAF = 10
DEFAULT_TREES = 100

FOREST_FORMAT = "satforest-forest"
FOREST_VERSION = 1


@dataclass
class Tree:
    """Binary regression tree over parallel node arrays.

    Internal nodes route "feature <= threshold" to the left child.  Leaf
    nodes (feature == -1) carry an index into the leaf statistic arrays.
    """

    feature: np.ndarray  # (nodes,) int, -1 marks a leaf
    threshold: np.ndarray  # (nodes,) float
    left: np.ndarray  # (nodes,) int child ids
    right: np.ndarray
    leaf_slot: np.ndarray  # (nodes,) int index into leaf arrays, -1 internal
    leaf_count: np.ndarray  # (leaves,) int
    leaf_mean_x: np.ndarray  # (leaves, m) mean feature vector per leaf
    leaf_mean_y: np.ndarray  # (leaves,) mean target per leaf
    sample_idx: np.ndarray | None = None  # training row ids incl. multiplicity

    def route(self, X: np.ndarray) -> np.ndarray:
        """Leaf slot for every row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(X.shape[0], dtype=np.intp)
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                break
            rows = np.flatnonzero(active)
            go_left = X[rows, feat[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(
                go_left, self.left[node[rows]], self.right[node[rows]]
            )
        return self.leaf_slot[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf_slot": self.leaf_slot.tolist(),
            "leaf_count": self.leaf_count.tolist(),
            "leaf_mean_x": self.leaf_mean_x.tolist(),
            "leaf_mean_y": self.leaf_mean_y.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            leaf_slot=np.asarray(d["leaf_slot"], dtype=np.int64),
            leaf_count=np.asarray(d["leaf_count"], dtype=np.int64),
            leaf_mean_x=np.asarray(d["leaf_mean_x"], dtype=np.float64),
            leaf_mean_y=np.asarray(d["leaf_mean_y"], dtype=np.float64),
        )


@dataclass
class Forest:
    trees: list[Tree]
    kind: str  # "rf" | "ert"
    m: int
    min_leaf: int
    max_depth: int | None
    feature_subsample: int
    seed: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_mean(self, X: np.ndarray) -> np.ndarray:
        """Plain ensemble prediction: average of tree leaf means."""
        _, Y = self.leaf_stats(X)
        return Y.mean(axis=1)

    def leaf_stats(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-example, per-tree leaf statistics.

        Returns (A, Y) with A[s, k] the mean feature vector of the leaf
        that row s reaches in tree k, and Y[s, k] that leaf's mean target.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.m:
            raise ValueError(f"expected {self.m} features, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("inputs must be finite")
        n = X.shape[0]
        A = np.empty((n, self.n_trees, self.m))
        Y = np.empty((n, self.n_trees))
        for k, tree in enumerate(self.trees):
            slots = tree.route(X)
            A[:, k, :] = tree.leaf_mean_x[slots]
            Y[:, k] = tree.leaf_mean_y[slots]
        return A, Y

    def to_dict(self) -> dict:
        return {
            "format": FOREST_FORMAT,
            "version": FOREST_VERSION,
            "kind": self.kind,
            "m": self.m,
            "min_leaf": self.min_leaf,
            "max_depth": self.max_depth,
            "feature_subsample": self.feature_subsample,
            "seed": self.seed,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        if d.get("format") != FOREST_FORMAT:
            raise ValueError("not a forest file")
        if d.get("version") != FOREST_VERSION:
            raise ValueError(f"unsupported forest version {d.get('version')!r}")
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            kind=d["kind"],
            m=int(d["m"]),
            min_leaf=int(d["min_leaf"]),
            max_depth=d["max_depth"],
            feature_subsample=int(d["feature_subsample"]),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class LeafAssignment:
    """Leaf statistics for a single input across all trees."""

    mean_x: np.ndarray  # (T, m)
    tree_pred: np.ndarray  # (T,)

    @property
    def n_trees(self) -> int:
        return self.tree_pred.shape[0]


def assign(forest: Forest, x: np.ndarray) -> LeafAssignment:
    """Route one input through every tree."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    A, Y = forest.leaf_stats(x)
    return LeafAssignment(mean_x=A[0], tree_pred=Y[0])


def _node_sse(sum_y: float, sum_y2: float, count: int) -> float:
    return sum_y2 - sum_y * sum_y / count


class _TreeBuilder:
    """Grows one tree on an index sample (duplicates allowed)."""

    def __init__(self, X, y, min_leaf, max_depth, feature_subsample, kind, rng):
        self.X = X
        self.y = y
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.feature_subsample = feature_subsample
        self.kind = kind
        self.rng = rng
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.leaf_slot = []
        self.leaf_count = []
        self.leaf_mean_x = []
        self.leaf_mean_y = []

    def build(self, idx: np.ndarray) -> None:
        self._grow(idx, depth=0)

    def _new_node(self):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.leaf_slot.append(-1)
        return len(self.feature) - 1

    def _make_leaf(self, node, idx):
        self.leaf_slot[node] = len(self.leaf_count)
        self.leaf_count.append(len(idx))
        self.leaf_mean_x.append(self.X[idx].mean(axis=0))
        self.leaf_mean_y.append(float(self.y[idx].mean()))

    def _grow(self, idx, depth):
        node = self._new_node()
        yv = self.y[idx]
        count = len(idx)
        sse = _node_sse(float(yv.sum()), float((yv * yv).sum()), count)
        depth_ok = self.max_depth is None or depth < self.max_depth
        if (
            count < 2 * self.min_leaf
            or sse <= 1e-12 * max(1.0, float(np.mean(yv) ** 2)) * count
            or not depth_ok
        ):
            self._make_leaf(node, idx)
            return node
        split = self._best_split(idx)
        if split is None:
            self._make_leaf(node, idx)
            return node
        feat, thr = split
        go_left = self.X[idx, feat] <= thr
        self.feature[node] = feat
        self.threshold[node] = thr
        self.left[node] = self._grow(idx[go_left], depth + 1)
        self.right[node] = self._grow(idx[~go_left], depth + 1)
        return node

    def _candidate_features(self):
        m = self.X.shape[1]
        k = min(self.feature_subsample, m)
        feats = self.rng.choice(m, size=k, replace=False)
        feats.sort()
        return feats

    def _best_split(self, idx):
        """Best (feature, threshold) by squared-error reduction.

        Ties resolve to the lowest feature index, then lowest threshold,
        which the iteration order guarantees with strict improvement.
        """
        best_gain = 0.0
        best = None
        yv = self.y[idx]
        total_sum = float(yv.sum())
        total_sum2 = float((yv * yv).sum())
        count = len(idx)
        parent_sse = _node_sse(total_sum, total_sum2, count)
        for feat in self._candidate_features():
            xv = self.X[idx, feat]
            if self.kind == "ert":
                lo = float(xv.min())
                hi = float(xv.max())
                if lo == hi:
                    continue
                thr = float(self.rng.uniform(lo, hi))
                mask = xv <= thr
                n_left = int(mask.sum())
                if n_left < self.min_leaf or count - n_left < self.min_leaf:
                    continue
                yl = yv[mask]
                sl, sl2 = float(yl.sum()), float((yl * yl).sum())
                gain = (
                    parent_sse
                    - _node_sse(sl, sl2, n_left)
                    - _node_sse(total_sum - sl, total_sum2 - sl2, count - n_left)
                )
                if gain > best_gain:
                    best_gain = gain
                    best = (int(feat), thr)
            else:
                order = np.argsort(xv, kind="stable")
                xs = xv[order]
                ys = yv[order]
                csum = np.cumsum(ys)
                csum2 = np.cumsum(ys * ys)
                # split after position p (count on the left side)
                p = np.arange(self.min_leaf, count - self.min_leaf + 1)
                valid = xs[p - 1] != xs[p]
                if not valid.any():
                    continue
                sl = csum[p - 1]
                sl2 = csum2[p - 1]
                gain = (
                    parent_sse
                    - (sl2 - sl * sl / p)
                    - ((total_sum2 - sl2) - (total_sum - sl) ** 2 / (count - p))
                )
                gain[~valid] = -np.inf
                at = int(np.argmax(gain))  # first max: lowest threshold on ties
                if gain[at] > best_gain:
                    best_gain = float(gain[at])
                    best = (int(feat), float((xs[p[at] - 1] + xs[p[at]]) / 2.0))
        return best

    def finish(self) -> Tree:
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            leaf_slot=np.asarray(self.leaf_slot, dtype=np.int64),
            leaf_count=np.asarray(self.leaf_count, dtype=np.int64),
            leaf_mean_x=np.asarray(self.leaf_mean_x, dtype=np.float64),
            leaf_mean_y=np.asarray(self.leaf_mean_y, dtype=np.float64),
        )


def fit_forest(
    ds: Dataset,
    kind: str = "rf",
    n_trees: int = DEFAULT_TREES,
    min_leaf: int = DEFAULT_MIN_LEAF,
    max_depth: int | None = None,
    feature_subsample: int | None = None,
    seed: int = 0,
) -> Forest:
    """Fit an ensemble of regression trees.

    "rf" trees train on a bootstrap resample of the rows (duplicates
    count with multiplicity in the leaf means); "ert" trees train on the
    full sample with one uniform-random threshold per candidate feature.
    Splits consider all features by default (the usual regression
    default); pass feature_subsample to restrict the candidate set.
    """
    if kind not in ("rf", "ert"):
        raise ValueError(f"unknown forest kind {kind!r}")
    if n_trees < 1:
        raise ValueError("need at least one tree")
    if ds.n < 2 * min_leaf:
        raise ValueError(
            f"need at least {2 * min_leaf} examples for min_leaf={min_leaf}"
        )
    if feature_subsample is None:
        feature_subsample = ds.m
    X, y = ds.features, ds.targets
    trees = []
    for child_seed in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child_seed)
        if kind == "rf":
            idx = rng.integers(0, ds.n, size=ds.n)
        else:
            idx = np.arange(ds.n)
        builder = _TreeBuilder(
            X, y, min_leaf, max_depth, feature_subsample, kind, rng
        )
        builder.build(idx)
        tree = builder.finish()
        tree.sample_idx = idx
        trees.append(tree)
    return Forest(
        trees=trees,
        kind=kind,
        m=ds.m,
        min_leaf=min_leaf,
        max_depth=max_depth,
        feature_subsample=feature_subsample,
        seed=seed,
    )
