"""Day-type classifiers: CART trees, a random forest and a nearest-centroid baseline.

All classifiers share ``fit(X, labels)`` / ``predict(X)`` and return cluster
indices.  Vote ties always resolve to the lowest index.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


def _majority(labels: np.ndarray, n_classes: int) -> int:
    counts = np.bincount(labels, minlength=n_classes)
    return int(np.argmax(counts))  # argmax returns the first (lowest) maximum


def _gini(counts: np.ndarray) -> float:
    tot = counts.sum()
    if tot == 0:
        return 0.0
    p = counts / tot
    return 1.0 - float((p * p).sum())


@dataclass
class DecisionTree:
    """CART classifier stored as flat node arrays (``feature == -1`` marks a leaf)."""

    max_depth: int = 4
    min_leaf: int = 1
    feature_fraction: float = 1.0
    seed: int = 0
    n_classes: int = 0
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[int] = field(default_factory=list)

    def fit(self, X, y, n_classes: int | None = None) -> "DecisionTree":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        self.n_classes = int(n_classes if n_classes is not None else y.max() + 1)
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []
        rng = np.random.default_rng(self.seed)
        self._grow(X, y, 0, rng)
        return self

    def _new_node(self, label: int) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(label)
        return len(self.feature) - 1

    def _best_split(self, X, y, rng):
        n, f = X.shape
        m = max(1, int(round(self.feature_fraction * f)))
        feats = np.sort(rng.choice(f, size=m, replace=False)) if m < f else np.arange(f)
        parent = _gini(np.bincount(y, minlength=self.n_classes))
        best = None
        for j in feats:
            order = np.argsort(X[:, j], kind="stable")
            xs, ys = X[order, j], y[order]
            left = np.zeros(self.n_classes)
            right = np.bincount(ys, minlength=self.n_classes).astype(float)
            for i in range(n - 1):
                left[ys[i]] += 1
                right[ys[i]] -= 1
                if xs[i] == xs[i + 1]:
                    continue
                nl = i + 1
                if nl < self.min_leaf or n - nl < self.min_leaf:
                    continue
                score = (nl * _gini(left) + (n - nl) * _gini(right)) / n
                if score < parent - 1e-12 and (best is None or score < best[0] - 1e-12):
                    best = (score, int(j), 0.5 * (xs[i] + xs[i + 1]))
        return best

    def _grow(self, X, y, depth, rng) -> int:
        node = self._new_node(_majority(y, self.n_classes))
        if depth >= self.max_depth or len(np.unique(y)) <= 1 or len(y) < 2 * self.min_leaf:
            return node
        split = self._best_split(X, y, rng)
        if split is None:
            return node
        _, j, thr = split
        mask = X[:, j] <= thr
        self.feature[node] = j
        self.threshold[node] = thr
        left = self._grow(X[mask], y[mask], depth + 1, rng)
        right = self._grow(X[~mask], y[~mask], depth + 1, rng)
        self.left[node] = left
        self.right[node] = right
        return node

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0], dtype=int)
        for r in range(X.shape[0]):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if X[r, self.feature[node]] <= self.threshold[node] else self.right[node]
            out[r] = self.value[node]
        return out

    def to_dict(self) -> dict:
        return {"max_depth": self.max_depth, "min_leaf": self.min_leaf, "feature_fraction": self.feature_fraction,
                "seed": self.seed, "n_classes": self.n_classes, "feature": self.feature,
                "threshold": self.threshold, "left": self.left, "right": self.right, "value": self.value}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(**d)


@dataclass
class RandomForestConfig:
    n_trees: int = 25
    max_depth: int = 4
    min_leaf: int = 2
    feature_fraction: float = 0.7
    bootstrap: bool = True
    seed: int = 0


@dataclass
class RandomForest:
    trees: list[DecisionTree]
    n_classes: int
    oob_accuracy: float = float("nan")
    config: RandomForestConfig = field(default_factory=RandomForestConfig)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        votes = np.zeros((X.shape[0], self.n_classes), dtype=int)
        for t in self.trees:
            votes[np.arange(X.shape[0]), t.predict(X)] += 1
        return votes.argmax(axis=1)

    def predict_one(self, x) -> int:
        return int(self.predict(np.atleast_2d(x))[0])

    def to_dict(self) -> dict:
        return {"kind": "random_forest", "n_classes": self.n_classes, "oob_accuracy": self.oob_accuracy,
                "config": self.config.__dict__, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForest":
        return cls([DecisionTree.from_dict(t) for t in d["trees"]], d["n_classes"], d["oob_accuracy"],
                   RandomForestConfig(**d["config"]))


def rf_fit(X, labels, cfg: RandomForestConfig | None = None, n_classes: int | None = None) -> RandomForest:
    """Bagged CART ensemble with per-split feature sampling; reports out-of-bag accuracy."""
    cfg = cfg or RandomForestConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(labels, dtype=int)
    k = int(n_classes if n_classes is not None else y.max() + 1)
    n = X.shape[0]
    if len(np.unique(y)) == 1:
        warnings.warn("single-class labels: the forest predicts a constant", stacklevel=2)
        leaf = DecisionTree(max_depth=0, n_classes=k).fit(X, y, k)
        return RandomForest([leaf], k, 1.0, cfg)
    rng = np.random.default_rng(cfg.seed)
    trees = []
    oob = np.zeros((n, k), dtype=int)
    for t in range(cfg.n_trees):
        idx = rng.integers(0, n, n) if cfg.bootstrap else np.arange(n)
        tree = DecisionTree(cfg.max_depth, cfg.min_leaf, cfg.feature_fraction, int(rng.integers(2**31)))
        tree.fit(X[idx], y[idx], k)
        trees.append(tree)
        out = np.setdiff1d(np.arange(n), idx)
        if out.size:
            oob[out, tree.predict(X[out])] += 1
    seen = oob.sum(axis=1) > 0
    acc = float((oob[seen].argmax(axis=1) == y[seen]).mean()) if seen.any() else float("nan")
    return RandomForest(trees, k, acc, cfg)


@dataclass
class NearestCentroidBaseline:
    """Assign the cluster whose mean (z-scored) feature vector is closest."""

    means: np.ndarray | None = None
    mu: np.ndarray | None = None
    sd: np.ndarray | None = None

    def fit(self, X, labels, n_classes: int | None = None) -> "NearestCentroidBaseline":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(labels, dtype=int)
        k = int(n_classes if n_classes is not None else y.max() + 1)
        self.mu = X.mean(axis=0)
        self.sd = np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
        means = np.full((k, X.shape[1]), np.inf)
        for j in range(k):
            if (y == j).any():
                means[j] = X[y == j].mean(axis=0)
        self.means = means
        return self

    def predict(self, X) -> np.ndarray:
        if self.means is None:
            raise ValueError("classifier is not trained")
        Z = (np.atleast_2d(np.asarray(X, dtype=float)) - self.mu) / self.sd
        M = (self.means - self.mu) / self.sd
        d2 = ((Z[:, None, :] - M[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)

    def predict_one(self, x) -> int:
        return int(self.predict(np.atleast_2d(x))[0])

    def to_dict(self) -> dict:
        return {"kind": "nearest_centroid", "means": np.where(np.isinf(self.means), 1e300, self.means).tolist(),
                "mu": self.mu.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NearestCentroidBaseline":
        means = np.array(d["means"], dtype=float)
        means[means >= 1e300] = np.inf
        return cls(means, np.array(d["mu"]), np.array(d["sd"]))
