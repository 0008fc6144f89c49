"""CART regression trees, random forests and quantile regression forests.

All three share one grower. A node is split on the (feature, threshold)
pair with the largest SSE reduction; thresholds are midpoints between
adjacent distinct values and ``x <= threshold`` routes left. Ties go to the
lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from newsforge import DataError


@dataclass(frozen=True)
class CartParams:
    minsplit: int = 20
    minbucket: int = 7
    cp: float = 0.01
    maxdepth: int = 30

    def __post_init__(self):
        if self.minbucket < 1 or self.minsplit < 1:
            raise ValueError("minsplit and minbucket must be >= 1")
        if self.minbucket > self.minsplit:
            raise ValueError("minbucket must not exceed minsplit")
        if self.cp < 0:
            raise ValueError("cp must be >= 0")
        if self.maxdepth < 1:
            raise ValueError("maxdepth must be >= 1")


@dataclass(frozen=True)
class ForestParams:
    ntree: int = 1000
    mtry: int | None = None  # None: max(1, p // 3)
    min_node_size: int = 5
    bootstrap: bool = True
    keep_leaf_samples: bool = False
    max_leaves: int | None = None
    max_depth: int | None = None

    def __post_init__(self):
        if self.ntree < 1:
            raise ValueError("ntree must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")


def qrrf_params(**overrides) -> ForestParams:
    base = dict(ntree=200, mtry=5, min_node_size=5, keep_leaf_samples=True)
    base.update(overrides)
    return ForestParams(**base)


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf.

    ``samples`` holds, per leaf, the sorted original-sample indices that
    route to it (only for quantile forests).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_node: np.ndarray
    n_features: int
    samples: dict | None = None

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def apply(self, X) -> np.ndarray:
        """Leaf id reached by each row."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features, got {X.shape[1]}")
        node = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        def rec(i):
            if self.feature[i] < 0:
                d = {"value": float(self.value[i]), "n": int(self.n_node[i])}
                if self.samples is not None:
                    d["samples"] = [int(s) for s in self.samples[i]]
                return d
            return {
                "feature": int(self.feature[i]),
                "threshold": float(self.threshold[i]),
                "n": int(self.n_node[i]),
                "left": rec(int(self.left[i])),
                "right": rec(int(self.right[i])),
            }

        return {"n_features": self.n_features, "root": rec(0)}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        feature, threshold, left, right, value, n_node = [], [], [], [], [], []
        samples = {}

        def rec(node):
            i = len(feature)
            feature.append(node.get("feature", -1))
            threshold.append(node.get("threshold", math.nan))
            left.append(-1)
            right.append(-1)
            value.append(node.get("value", math.nan))
            n_node.append(node.get("n", 0))
            if "samples" in node:
                samples[i] = np.array(node["samples"], dtype=int)
            if "left" in node:
                left[i] = rec(node["left"])
                right[i] = rec(node["right"])
            return i

        rec(d["root"])
        return cls(
            np.array(feature, dtype=int), np.array(threshold, dtype=float),
            np.array(left, dtype=int), np.array(right, dtype=int),
            np.array(value, dtype=float), np.array(n_node, dtype=int),
            int(d["n_features"]), samples or None,
        )


def best_split(X, y, features, min_bucket):
    """Best (gain, feature, threshold) over ``features`` or ``None``.

    Gains are computed from prefix sums of the node-centred target.
    """
    m = y.shape[0]
    if m < 2 * min_bucket:
        return None
    sub = X[:, features]
    order = np.argsort(sub, axis=0, kind="stable")
    xs = np.take_along_axis(sub, order, axis=0)
    yc = y - y.mean()
    ys = yc[order]
    c1 = np.cumsum(ys, axis=0)[:-1]
    tot = ys.sum(axis=0)[0]
    nl = np.arange(1, m, dtype=float)[:, None]
    nr = m - nl
    gain = c1**2 / nl + (tot - c1) ** 2 / nr - tot**2 / m
    valid = (xs[1:] > xs[:-1]) & (nl >= min_bucket) & (nr >= min_bucket)
    gain = np.where(valid, gain, -np.inf)
    # feature-major flattening: argmax keeps lowest feature, then lowest threshold
    flat = gain.T.ravel()
    top = flat.max()
    if not np.isfinite(top):
        return None
    # gains equal up to rounding count as ties
    k = int(np.argmax(flat >= top - 1e-12 * max(1.0, abs(top))))
    f, pos = divmod(k, m - 1)
    lo, hi = xs[pos, f], xs[pos + 1, f]
    thr = (lo + hi) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return float(flat[k]), int(features[f]), float(thr)


def grow_tree(X, y, rows, *, min_split, min_bucket, max_depth, min_gain, mtry=None,
              rng=None, max_leaves=None) -> Tree:
    """Grow one tree on ``X[rows]`` best-first.

    A node is split only if it holds at least ``min_split`` rows, is
    shallower than ``max_depth``, is not constant, and its best gain is
    strictly greater than ``min_gain``.
    """
    p = X.shape[1]
    feature, threshold, left, right, value, n_node, depth = [], [], [], [], [], [], []
    node_rows = []

    def new_node(r, d):
        feature.append(-1)
        threshold.append(math.nan)
        left.append(-1)
        right.append(-1)
        value.append(float(y[r].mean()))
        n_node.append(r.size)
        depth.append(d)
        node_rows.append(r)
        return len(feature) - 1

    def candidate(i):
        r = node_rows[i]
        yr = y[r]
        if r.size < min_split or (max_depth is not None and depth[i] >= max_depth):
            return None
        if yr.max() == yr.min():
            return None
        if mtry is None or mtry >= p:
            feats = np.arange(p)
        else:
            feats = np.sort(rng.choice(p, size=mtry, replace=False))
        found = best_split(X[r], yr, feats, min_bucket)
        if found is None or not found[0] > min_gain:
            return None
        return found

    root = new_node(np.asarray(rows, dtype=int), 0)
    heap = []
    c = candidate(root)
    if c is not None:
        heapq.heappush(heap, (-c[0], root, c))
    leaves = 1
    while heap and (max_leaves is None or leaves < max_leaves):
        _, i, (g, f, thr) = heapq.heappop(heap)
        r = node_rows[i]
        mask = X[r, f] <= thr
        feature[i], threshold[i] = f, thr
        li = new_node(r[mask], depth[i] + 1)
        ri = new_node(r[~mask], depth[i] + 1)
        left[i], right[i] = li, ri
        leaves += 1
        for j in (li, ri):
            cj = candidate(j)
            if cj is not None:
                heapq.heappush(heap, (-cj[0], j, cj))

    return Tree(
        np.array(feature, dtype=int), np.array(threshold, dtype=float),
        np.array(left, dtype=int), np.array(right, dtype=int),
        np.array(value, dtype=float), np.array(n_node, dtype=int), p,
    )


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError("X must be 2-D with one row per target")
    if X.shape[0] == 0:
        raise DataError("cannot fit a tree on empty data")
    return X, y


def fit_cart(X, y, params: CartParams = CartParams(), seed=None) -> Tree:
    """Single regression tree with the rpart-style stopping rules.

    A split must reduce SSE by strictly more than ``cp * SSE(root)``.
    """
    X, y = _check_xy(X, y)
    if X.shape[0] < 2:
        raise DataError("CART needs at least 2 rows")
    root_sse = float(np.sum((y - y.mean()) ** 2))
    return grow_tree(
        X, y, np.arange(X.shape[0]),
        min_split=params.minsplit, min_bucket=params.minbucket,
        max_depth=params.maxdepth, min_gain=params.cp * root_sse,
    )


def predict_cart(tree: Tree, X) -> np.ndarray:
    return tree.predict(X)


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple[Tree, ...]
    inbag: np.ndarray  # (ntree, n) bootstrap multiplicities
    y_train: np.ndarray | None = None  # kept for quantile prediction

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def tree_predictions(self, X) -> np.ndarray:
        return np.vstack([t.predict(X) for t in self.trees])

    def predict(self, X) -> np.ndarray:
        return predict_forest_mean(self, X)

    def oob_rows(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.inbag[t] == 0)

    def to_dict(self) -> dict:
        return {
            "model": "rf",
            "trees": [t.to_dict() for t in self.trees],
            "inbag": self.inbag.tolist(),
            "y_train": None if self.y_train is None else self.y_train.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        y = d.get("y_train")
        return cls(
            tuple(Tree.from_dict(t) for t in d["trees"]),
            np.array(d["inbag"], dtype=int),
            None if y is None else np.array(y, dtype=float),
        )


def fit_forest(X, y, params: ForestParams = ForestParams(), seed: int = 0) -> Forest:
    """Bagged trees with per-node feature subsampling.

    Tree ``t`` draws its bootstrap sample and feature subsets from its own
    generator spawned from ``seed``, so results do not depend on the order
    in which trees are grown.
    """
    X, y = _check_xy(X, y)
    n, p = X.shape
    if n < 2:
        raise DataError("forest needs at least 2 rows")
    mtry = params.mtry if params.mtry is not None else max(1, p // 3)
    if mtry > p:
        raise DataError(f"mtry={mtry} exceeds the feature count {p}")
    if mtry < 1:
        raise DataError("mtry must be >= 1")

    streams = np.random.SeedSequence(seed).spawn(params.ntree)
    trees, inbag = [], np.zeros((params.ntree, n), dtype=int)
    for t, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        rows = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        inbag[t] = np.bincount(rows, minlength=n)
        tree = grow_tree(
            X, y, np.sort(rows),
            min_split=2 * params.min_node_size, min_bucket=params.min_node_size,
            max_depth=params.max_depth, min_gain=0.0,
            mtry=mtry, rng=rng, max_leaves=params.max_leaves,
        )
        if params.keep_leaf_samples:
            leaf_of = tree.apply(X)
            samples = {int(leaf): np.flatnonzero(leaf_of == leaf) for leaf in np.unique(leaf_of)}
            tree = Tree(tree.feature, tree.threshold, tree.left, tree.right, tree.value,
                        tree.n_node, tree.n_features, samples)
        trees.append(tree)
    return Forest(tuple(trees), inbag, y.copy() if params.keep_leaf_samples else None)


def predict_forest_mean(forest: Forest, X) -> np.ndarray:
    """Average of per-tree leaf means."""
    return forest.tree_predictions(X).mean(axis=0)


def quantile_weights(forest: Forest, X) -> np.ndarray:
    """Per-query weights over training samples, shape ``(n_queries, n_train)``.

    ``w_i(x) = (1/ntree) * sum_t 1[i in leaf_t(x)] / |leaf_t(x)|``.
    """
    if forest.y_train is None or any(t.samples is None for t in forest.trees):
        raise DataError("forest was grown without leaf samples")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    W = np.zeros((X.shape[0], forest.y_train.size))
    for tree in forest.trees:
        leaves = tree.apply(X)
        for q, leaf in enumerate(leaves):
            s = tree.samples[int(leaf)]
            W[q, s] += 1.0 / s.size
    return W / len(forest.trees)


def weighted_quantile(values, weights, q: float) -> float:
    """Smallest value whose cumulative weight reaches ``q``."""
    order = np.argsort(values, kind="stable")
    v = np.asarray(values)[order]
    cw = np.cumsum(np.asarray(weights)[order])
    total = cw[-1]
    # tolerance absorbs rounding in the cumulative sum
    k = int(np.searchsorted(cw, q * total - 1e-12 * total, side="left"))
    return float(v[min(k, v.size - 1)])


def predict_forest_quantile(forest: Forest, X, q: float = 0.5) -> np.ndarray:
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile must lie in (0, 1), got {q}")
    W = quantile_weights(forest, X)
    return np.array([weighted_quantile(forest.y_train, w, q) for w in W])


@dataclass(frozen=True, eq=False)
class QuantileForest:
    """Forest whose point forecast is a conditional quantile (median by default)."""

    forest: Forest
    quantile: float = 0.5

    @property
    def n_features(self) -> int:
        return self.forest.n_features

    def predict(self, X) -> np.ndarray:
        return predict_forest_quantile(self.forest, X, self.quantile)

    def to_dict(self) -> dict:
        d = self.forest.to_dict()
        d["model"] = "qrrf"
        d["quantile"] = self.quantile
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QuantileForest":
        return cls(Forest.from_dict(d), float(d.get("quantile", 0.5)))
