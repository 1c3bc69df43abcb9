"""Binary Gini decision trees and random forests built from scratch on numpy.

Trees are stored as flat node arrays. Class 0 is benign and class 1 malicious.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

SCHEMA_VERSION = 1


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class HyperParams:
    n_trees: int = 100
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    # "sqrt", "all", or an explicit feature count
    max_features: Union[str, int] = "sqrt"
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")

    def n_features(self, total: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(math.isqrt(total)))
        if self.max_features == "all":
            return total
        return max(1, min(total, int(self.max_features)))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Split:
    feature_index: int
    threshold: float
    left: int
    right: int
    node_impurity: float
    n_samples: int


@dataclass(frozen=True)
class Leaf:
    class_counts: tuple[int, int]
    predicted_label: int


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, 2)
    impurity: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def node(self, i: int) -> Union[Split, Leaf]:
        if self.feature[i] < 0:
            c = tuple(int(x) for x in self.counts[i])
            return Leaf(c, int(c[1] >= c[0]))
        return Split(int(self.feature[i]), float(self.threshold[i]), int(self.left[i]),
                     int(self.right[i]), float(self.impurity[i]), int(self.n_samples[i]))

    def leaf_labels(self) -> np.ndarray:
        # ties vote malicious
        return (self.counts[:, 1] >= self.counts[:, 0]).astype(np.int8)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            cur = node[active]
            f = self.feature[cur]
            go_left = X[active, f] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_labels()[self.apply(X)]

    def importances(self, n_features: int) -> np.ndarray:
        imp = np.zeros(n_features)
        for i in np.flatnonzero(self.feature >= 0):
            l, r = self.left[i], self.right[i]
            decrease = (self.n_samples[i] * self.impurity[i]
                        - self.n_samples[l] * self.impurity[l]
                        - self.n_samples[r] * self.impurity[r])
            imp[self.feature[i]] += decrease
        return imp

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(x) for x in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
            "impurity": [float(x) for x in self.impurity],
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            counts=np.asarray(d["counts"], dtype=np.int64).reshape(-1, 2),
            impurity=np.asarray(d["impurity"], dtype=np.float64),
            n_samples=np.asarray(d["n_samples"], dtype=np.int64),
        )


def _gini(n_pos: float, n: float) -> float:
    if n == 0:
        return 0.0
    p = n_pos / n
    return 2.0 * p * (1.0 - p)


def _best_split(x: np.ndarray, y: np.ndarray):
    """Best threshold on one feature column. Returns (cost, threshold) or None.

    ``cost`` is the size-weighted child impurity sum ``n_l*g_l + n_r*g_r``.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    ys = y[order]
    n = len(xs)
    n_left = np.arange(1, n, dtype=np.float64)
    pos_left = np.cumsum(ys[:-1], dtype=np.float64)
    total_pos = pos_left[-1] + ys[-1]
    n_right = n - n_left
    pos_right = total_pos - pos_left
    cost = (2.0 * pos_left * (n_left - pos_left) / n_left
            + 2.0 * pos_right * (n_right - pos_right) / n_right)
    cost = np.where(valid, cost, np.inf)
    b = int(np.argmin(cost))
    lo, hi = xs[b], xs[b + 1]
    thr = lo + (hi - lo) / 2.0
    if not (lo <= thr < hi):
        thr = lo
    return float(cost[b]), float(thr)


def build_tree(X: np.ndarray, y: np.ndarray, hp: HyperParams, rng: np.random.Generator) -> Tree:
    n_total_features = X.shape[1]
    k = hp.n_features(n_total_features)
    max_depth = math.inf if hp.max_depth is None else hp.max_depth

    feature, threshold, left, right, counts, impurity, n_samples = [], [], [], [], [], [], []

    def new_node(idx):
        pos = int(y[idx].sum())
        n = len(idx)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append((n - pos, pos))
        impurity.append(_gini(pos, n))
        n_samples.append(n)
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        n = len(idx)
        if depth >= max_depth or n < hp.min_samples_split or impurity[node] == 0.0:
            continue
        Xn, yn = X[idx], y[idx]
        best = None  # (cost, feature, threshold)
        evaluated = 0
        for f in rng.permutation(n_total_features):
            res = _best_split(Xn[:, f], yn)
            if res is None:
                continue  # constant here; does not count toward k
            cost, thr = res
            if best is None or cost < best[0] or (cost == best[0] and f < best[1]):
                best = (cost, int(f), thr)
            evaluated += 1
            if evaluated >= k:
                break
        if best is None:
            continue
        _, f, thr = best
        mask = Xn[:, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node] = f
        threshold[node] = thr
        lnode = new_node(li)
        rnode = new_node(ri)
        left[node], right[node] = lnode, rnode
        stack.append((rnode, ri, depth + 1))
        stack.append((lnode, li, depth + 1))

    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        counts=np.asarray(counts, dtype=np.int64).reshape(-1, 2),
        impurity=np.asarray(impurity, dtype=np.float64),
        n_samples=np.asarray(n_samples, dtype=np.int64),
    )


def worker_count() -> int:
    """Worker cap from ``XFLOW_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("XFLOW_THREADS", "1")))
    except ValueError:
        return 1


def tree_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, index])


@dataclass
class RandomForest:
    trees: list[Tree]
    hyperparams: HyperParams
    seed: int
    importances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_features: int = 12

    def votes(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        total = np.zeros(len(X), dtype=np.int64)
        for t in self.trees:
            total += t.predict(X)
        return total

    def score(self, X: np.ndarray) -> np.ndarray:
        return self.votes(X) / len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        # 2*votes >= n_trees is score >= 0.5 without float rounding
        return (2 * self.votes(X) >= len(self.trees)).astype(np.int8)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "n_features": self.n_features,
            "hyperparams": self.hyperparams.to_dict(),
            "importances": [float(x) for x in self.importances],
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForest":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema version {d.get('schema_version')}")
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            hyperparams=HyperParams(**d["hyperparams"]),
            seed=int(d["seed"]),
            importances=np.asarray(d["importances"], dtype=np.float64),
            n_features=int(d["n_features"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _forest_importances(trees: list[Tree], n_features: int) -> np.ndarray:
    acc = np.zeros(n_features)
    for t in trees:
        imp = t.importances(n_features)
        s = imp.sum()
        if s > 0:
            acc += imp / s
    total = acc.sum()
    return acc / total if total > 0 else acc


def train_forest(X, y, hp: HyperParams = HyperParams(), seed: int = 0) -> RandomForest:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise TrainingError("X must be 2-D with one row per label")
    if len(y) < 2:
        raise TrainingError("need at least 2 samples")
    if not ((y == 0).any() and (y == 1).any()):
        raise TrainingError("training data must contain both benign and malicious samples")

    def grow(i: int) -> Tree:
        rng = np.random.default_rng(tree_seed(seed, i))
        if hp.bootstrap:
            idx = rng.integers(0, len(y), size=len(y))
            return build_tree(X[idx], y[idx], hp, rng)
        return build_tree(X, y, hp, rng)

    workers = min(worker_count(), hp.n_trees)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            trees = list(pool.map(grow, range(hp.n_trees)))
    else:
        trees = [grow(i) for i in range(hp.n_trees)]
    return RandomForest(trees, hp, seed, _forest_importances(trees, X.shape[1]), X.shape[1])


def predict(model: RandomForest, x) -> tuple[int, float]:
    """Single-sample prediction: (label, fraction of trees voting malicious)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.n_features:
        raise ValueError(f"expected a vector of {model.n_features} features")
    votes = int(model.votes(x[None, :])[0])
    n = len(model.trees)
    return int(2 * votes >= n), votes / n
