"""Regression random forest grown from scratch.

Trees are CART regression trees on bootstrap samples with ``mtry`` candidate
features per node.  The forest keeps every tree's in-bag counts so both the
full in-sample residual matrix and the out-of-bag mask can be extracted.

Tree ``j`` draws all of its randomness (bootstrap rows, then feature subsets
node by node) from its own stream, ``PCG64(SeedSequence(seed, spawn_key=(j,)))``.
A forest is therefore identical whether trees are grown serially or on a
thread pool.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

FOREST_FORMAT = "hedgeforest.forest"
FOREST_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    """Hyperparameters; defaults follow ranger's regression defaults."""

    num_trees: int = 500
    mtry: int | None = None  # None -> floor(sqrt(d))
    min_node_size: int = 5
    max_depth: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def resolve_mtry(self, d: int) -> int:
        mtry = max(1, math.isqrt(d)) if self.mtry is None else self.mtry
        if not 1 <= mtry <= d:
            raise ValueError(f"mtry must lie in [1, {d}], got {mtry}")
        return mtry

    def validate(self, d: int) -> None:
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        self.resolve_mtry(d)


@dataclass(frozen=True)
class RegressionTree:
    """Flat node arrays; ``feature[k] == -1`` marks a leaf.

    ``in_bag_counts[i]`` is how often training row ``i`` was drawn into the
    bootstrap sample (the in-bag multiset).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    in_bag_counts: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def in_bag_indices(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.in_bag_counts)), self.in_bag_counts)

    @property
    def oob_indices(self) -> np.ndarray:
        return np.flatnonzero(self.in_bag_counts == 0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _apply_tree(X, self.feature, self.threshold, self.left, self.right)


@dataclass(frozen=True)
class FittedForest:
    trees: tuple[RegressionTree, ...]
    config: ForestConfig
    d: int
    n_train: int

    @property
    def num_trees(self) -> int:
        return len(self.trees)

    def predict(self, X) -> np.ndarray:
        """Equal-weighted forest prediction (row means of the tree matrix)."""
        return tree_prediction_matrix(self, X).mean(axis=1)

    def oob_mask(self) -> np.ndarray:
        """Boolean (n_train x p) matrix, True where row i is out of bag for tree j."""
        return np.column_stack([t.in_bag_counts == 0 for t in self.trees])


@dataclass(frozen=True)
class ResidualMatrix:
    values: np.ndarray
    oob_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"residual matrix must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("residual matrix has missing or non-finite entries")
        object.__setattr__(self, "values", values)
        if self.oob_mask is not None:
            mask = np.asarray(self.oob_mask, dtype=bool)
            if mask.shape != values.shape:
                raise ValueError("oob_mask shape does not match values")
            object.__setattr__(self, "oob_mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


# -- numba kernels ------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _grow_tree(X, y, sample, mtry, min_node_size, max_depth, rng):
    m = sample.shape[0]
    d = X.shape[1]
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    n_samples = np.zeros(cap, np.int64)

    idx = sample.copy()
    xs = np.empty(m)
    ys = np.empty(m)

    stack_node = np.empty(cap, np.int64)
    stack_start = np.empty(cap, np.int64)
    stack_end = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)
    top = 0
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = m
    stack_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        size = end - start

        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        for k in range(start, end):
            v = y[idx[k]]
            total += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        value[node] = total / size
        n_samples[node] = size

        if size < 2 * min_node_size or ymin == ymax or (max_depth >= 0 and depth >= max_depth):
            continue

        feats = np.sort(rng.permutation(d)[:mtry])
        parent_score = total * total / size
        best_score = parent_score
        best_feat = -1
        best_thr = 0.0

        for f in feats:
            for k in range(size):
                xs[k] = X[idx[start + k], f]
                ys[k] = y[idx[start + k]]
            order = np.argsort(xs[:size], kind="mergesort")
            left_sum = 0.0
            for k in range(size - 1):
                o = order[k]
                left_sum += ys[o]
                lo = xs[o]
                hi = xs[order[k + 1]]
                if lo == hi:
                    continue
                n_left = k + 1
                right_sum = total - left_sum
                score = left_sum * left_sum / n_left + right_sum * right_sum / (size - n_left)
                if score > best_score:
                    best_score = score
                    best_feat = f
                    thr = 0.5 * (lo + hi)
                    if thr >= hi:
                        thr = lo
                    best_thr = thr

        if best_feat < 0:
            continue

        # partition idx[start:end] so rows going left come first
        i = start
        j = end - 1
        while i <= j:
            if X[idx[i], best_feat] <= best_thr:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        mid = i

        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        n_nodes += 2

        # right pushed first so the left subtree is expanded first
        stack_node[top] = right[node]
        stack_start[top] = mid
        stack_end[top] = end
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = left[node]
        stack_start[top] = start
        stack_end[top] = mid
        stack_depth[top] = depth + 1
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), n_samples[:n_nodes].copy())


@numba.njit(cache=True, nogil=True)
def _apply_tree(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], np.int64)
    for i in range(X.shape[0]):
        k = 0
        while feature[k] >= 0:
            if X[i, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] = k
    return out


@numba.njit(cache=True, nogil=True)
def _predict_packed(X, offsets, feature, threshold, left, right, value):
    p = offsets.shape[0] - 1
    out = np.empty((X.shape[0], p))
    for j in range(p):
        base = offsets[j]
        for i in range(X.shape[0]):
            k = base
            while feature[k] >= 0:
                if X[i, feature[k]] <= threshold[k]:
                    k = base + left[k]
                else:
                    k = base + right[k]
            out[i, j] = value[k]
    return out


# -- public API ---------------------------------------------------------------

def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(tree_index,))))


def _fit_one(X, y, config: ForestConfig, mtry: int, j: int) -> RegressionTree:
    n = X.shape[0]
    rng = tree_rng(config.seed, j)
    if config.bootstrap:
        sample = rng.integers(0, n, size=n)
    else:
        sample = np.arange(n)
    counts = np.bincount(sample, minlength=n)
    max_depth = -1 if config.max_depth is None else config.max_depth
    arrays = _grow_tree(X, y, sample.astype(np.int64), mtry, config.min_node_size, max_depth, rng)
    return RegressionTree(*arrays, in_bag_counts=counts)


def fit_forest(X, y, config: ForestConfig | None = None, threads: int = 1) -> FittedForest:
    """Grow ``config.num_trees`` regression trees on ``(X, y)``.

    A node is split when it holds at least ``2 * min_node_size`` in-bag draws,
    its targets are not all equal, and some candidate split lowers the summed
    squared error.  Candidate thresholds are midpoints between consecutive
    distinct feature values; ties go to the lowest feature index, then the
    lowest threshold.  ``threads`` changes wall time only, never the result.
    """
    config = config or ForestConfig()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}")
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 training rows")
    config.validate(d)
    mtry = config.resolve_mtry(d)

    def fit(j):
        return _fit_one(X, y, config, mtry, j)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = tuple(pool.map(fit, range(config.num_trees)))
    else:
        trees = tuple(fit(j) for j in range(config.num_trees))
    return FittedForest(trees=trees, config=config, d=d, n_train=n)


def predict_tree(tree: RegressionTree, x) -> float:
    """Route one observation to its leaf; ``x[f] <= threshold`` goes left."""
    x = np.asarray(x, dtype=np.float64).ravel()
    k = 0
    while tree.feature[k] >= 0:
        k = tree.left[k] if x[tree.feature[k]] <= tree.threshold[k] else tree.right[k]
    return float(tree.value[k])


def _pack(forest: FittedForest):
    sizes = np.array([t.node_count for t in forest.trees], dtype=np.int64)
    offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    cat = lambda name: np.concatenate([getattr(t, name) for t in forest.trees])  # noqa: E731
    return offsets, cat("feature"), cat("threshold"), cat("left"), cat("right"), cat("value")


def tree_prediction_matrix(forest: FittedForest, X) -> np.ndarray:
    """Matrix of per-tree forecasts, shape (m, p)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != forest.d:
        raise ValueError(f"expected {forest.d} columns, got shape {X.shape}")
    return _predict_packed(X, *_pack(forest))


def residual_matrix(forest: FittedForest, X, y) -> ResidualMatrix:
    """Full in-sample error matrix ``y_i - M_j(x_i)`` plus the OOB mask."""
    y = np.asarray(y, dtype=np.float64).ravel()
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != forest.n_train or y.shape[0] != forest.n_train:
        raise ValueError(
            f"forest was fitted on {forest.n_train} rows, got X {X.shape} and y {y.shape}"
        )
    preds = tree_prediction_matrix(forest, X)
    return ResidualMatrix(values=y[:, None] - preds, oob_mask=forest.oob_mask())


# -- serialization ------------------------------------------------------------

def forest_to_json(forest: FittedForest) -> str:
    """Versioned JSON layout: config, shapes and one node-array record per tree."""
    payload = {
        "format": FOREST_FORMAT,
        "version": FOREST_FORMAT_VERSION,
        "config": asdict(forest.config),
        "d": forest.d,
        "n_train": forest.n_train,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
                "n_samples": t.n_samples.tolist(),
                "in_bag_counts": t.in_bag_counts.tolist(),
            }
            for t in forest.trees
        ],
    }
    return json.dumps(payload)


def forest_from_json(text: str) -> FittedForest:
    payload = json.loads(text)
    if payload.get("format") != FOREST_FORMAT:
        raise ValueError("not a serialized forest")
    if payload.get("version") != FOREST_FORMAT_VERSION:
        raise ValueError(f"unsupported forest format version {payload.get('version')}")
    ints = ("feature", "left", "right", "n_samples", "in_bag_counts")
    trees = tuple(
        RegressionTree(**{k: np.asarray(v, dtype=np.int64 if k in ints else np.float64)
                          for k, v in rec.items()})
        for rec in payload["trees"]
    )
    return FittedForest(trees=trees, config=ForestConfig(**payload["config"]),
                        d=payload["d"], n_train=payload["n_train"])
