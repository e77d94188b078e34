"""CART trees, random forests and class-weighted gradient boosting.

Split search is exact: each feature is presorted once and node membership is
carried down the tree as per-feature sorted index lists, so every candidate
midpoint between consecutive distinct values is scored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import EmptyData, SingleClass, UsageError
from .synthgrid import substream

MODEL_VERSION = 1


@dataclass
class DecisionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int | None = None
    min_samples_leaf: int = 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        """Leaf index for each row (``x <= threshold`` goes left)."""
        X = np.asarray(X, float)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r, nd = rows[active], node[active]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
        }

    @classmethod
    def from_dict(cls, d) -> "DecisionTree":
        return cls(np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], float),
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   np.array(d["value"], float), d["max_depth"], d["min_samples_leaf"])


def presort(X) -> list[np.ndarray]:
    X = np.asarray(X, float)
    return [np.argsort(X[:, f], kind="stable").astype(np.int32) for f in range(X.shape[1])]


class _TreeBuilder:
    def __init__(self, X, y, w, max_depth, min_samples_leaf, max_features, rng, sorted_idx):
        self.X, self.y, self.w = X, y, w
        self.cols = [np.ascontiguousarray(X[:, f]) for f in range(X.shape[1])]
        self.wy = w * y
        self.max_depth = max_depth if max_depth is not None else np.inf
        self.msl = max(int(min_samples_leaf), 1)
        self.max_features = max_features
        self.rng = rng
        self.root_sorted = sorted_idx
        self.mark = np.zeros(len(y), dtype=bool)
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def _new_node(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def _best_split(self, sorted_idx, W, S):
        n = len(sorted_idx[0])
        n_feat = self.X.shape[1]
        if self.max_features is not None and self.max_features < n_feat:
            candidates = np.sort(self.rng.choice(n_feat, size=self.max_features, replace=False))
        else:
            candidates = range(n_feat)
        best = (S * S / W, -1, 0.0)  # parent proxy: a split must beat it
        tol = 1e-12 * max(abs(best[0]), 1.0)
        lo, hi = self.msl - 1, n - self.msl  # valid split positions i: lo <= i < hi
        if hi <= lo:
            return None
        for f in candidates:
            order = sorted_idx[f]
            v = self.cols[f][order]
            wl = np.cumsum(self.w[order])[lo:hi]
            sl = np.cumsum(self.wy[order])[lo:hi]
            distinct = v[lo + 1:hi + 1] > v[lo:hi]
            wr = W - wl
            ok = distinct & (wl > 0) & (wr > 0)
            if not ok.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                proxy = np.where(ok, sl * sl / wl + (S - sl) ** 2 / wr, -np.inf)
            i = int(np.argmax(proxy))
            if proxy[i] > best[0] + tol:
                best = (proxy[i], int(f), 0.5 * (v[lo + i] + v[lo + i + 1]))
                tol = 1e-12 * max(abs(best[0]), 1.0)
        return None if best[1] < 0 else best

    def build(self) -> DecisionTree:
        stack = [(self.root_sorted, 0, None, None)]
        while stack:
            sorted_idx, depth, parent, side = stack.pop()
            rows = sorted_idx[0]
            W = float(self.w[rows].sum())
            S = float(self.wy[rows].sum())
            node = self._new_node(S / W if W > 0 else 0.0)
            if parent is not None:
                (self.left if side == "L" else self.right)[parent] = node
            yr = self.y[rows]
            if depth >= self.max_depth or len(rows) < 2 * self.msl or yr.min() == yr.max():
                continue
            split = self._best_split(sorted_idx, W, S)
            if split is None:
                continue
            _, f, thr = split
            self.feature[node], self.threshold[node] = f, thr
            goes_left = rows[self.cols[f][rows] <= thr]
            self.mark[goes_left] = True
            masks = [self.mark[a] for a in sorted_idx]
            left_sorted = [a[k] for a, k in zip(sorted_idx, masks)]
            right_sorted = [a[~k] for a, k in zip(sorted_idx, masks)]
            self.mark[goes_left] = False
            # right pushed first so the left subtree is numbered first
            stack.append((right_sorted, depth + 1, node, "R"))
            stack.append((left_sorted, depth + 1, node, "L"))
        as_int = lambda a: np.array(a, dtype=np.int64)  # noqa: E731
        return DecisionTree(as_int(self.feature), np.array(self.threshold, float), as_int(self.left),
                            as_int(self.right), np.array(self.value, float),
                            None if self.max_depth == np.inf else int(self.max_depth), self.msl)


def tree_fit(X, y, max_depth: int | None = None, min_samples_leaf: int = 1, sample_weight=None,
             max_features: int | None = None, seed: int = 0, presorted=None) -> DecisionTree:
    """Greedy CART.

    Leaves predict the weighted mean of ``y``: the positive-class frequency for
    0/1 labels (Gini criterion) or the mean target (variance criterion). Both
    criteria rank splits by ``S_L^2/W_L + S_R^2/W_R`` with ``S`` the weighted
    target sum and ``W`` the weight sum of a child. Ties keep the lowest
    feature index, then the lowest threshold.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyData("tree_fit needs at least one sample")
    if len(y) != len(X):
        raise UsageError("X and y must have the same number of rows")
    w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, float)
    if presorted is None:
        presorted = presort(X)
    if (w <= 0).any():
        keep = w > 0
        presorted = [a[keep[a]] for a in presorted]
    if len(presorted[0]) == 0:
        raise EmptyData("all sample weights are zero")
    rng = substream(seed, "tree-features")
    return _TreeBuilder(X, y, w, max_depth, min_samples_leaf, max_features, rng, presorted).build()


@dataclass
class RfModel:
    trees: list[DecisionTree]
    seeds: list[int]
    max_features: int | None

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def to_dict(self) -> dict:
        return {"kind": "random_forest", "version": MODEL_VERSION, "max_features": self.max_features,
                "seeds": self.seeds, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d) -> "RfModel":
        return cls([DecisionTree.from_dict(t) for t in d["trees"]], list(d["seeds"]), d["max_features"])


def _check_binary(y):
    y = np.asarray(y, float)
    if len(y) == 0:
        raise EmptyData("no training rows")
    if not np.isin(y, (0.0, 1.0)).all():
        raise UsageError("labels must be 0/1")
    return y


def rf_fit(X, y, n_trees: int = 50, seed: int = 0, max_depth: int | None = 12,
           min_samples_leaf: int = 5, max_features="sqrt", bootstrap: bool = True) -> RfModel:
    """Bagged CART classifiers with ``floor(sqrt(F))`` candidate features per split."""
    X = np.asarray(X, float)
    y = _check_binary(y)
    n, n_feat = X.shape
    if max_features == "sqrt":
        max_features = max(1, int(np.floor(np.sqrt(n_feat))))
    pre = presort(X)
    trees, seeds = [], []
    for i in range(n_trees):
        tree_seed = int(substream(seed, "rf-tree", str(i)).integers(0, 2**63 - 1))
        rng = np.random.default_rng(tree_seed)
        w = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float) if bootstrap else None
        trees.append(tree_fit(X, y, max_depth, min_samples_leaf, w, max_features, tree_seed, pre))
        seeds.append(tree_seed)
    return RfModel(trees, seeds, max_features)


def rf_predict_proba(model: RfModel, X) -> np.ndarray:
    return model.predict_proba(X)


@dataclass
class GbmModel:
    init: float
    trees: list[DecisionTree]
    learning_rate: float = 0.1
    n_trees: int = 200
    max_depth: int = 3
    train_loss: list[float] = field(default_factory=list)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        out = np.full(len(X), self.init)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def predict_proba(self, X) -> np.ndarray:
        # clip keeps probabilities strictly inside (0, 1) in float64
        return np.clip(expit(self.decision_function(X)), 1e-15, 1 - 1e-15)

    def to_dict(self) -> dict:
        return {"kind": "gradient_boosting", "version": MODEL_VERSION, "init": self.init,
                "learning_rate": self.learning_rate, "n_trees": self.n_trees, "max_depth": self.max_depth,
                "train_loss": self.train_loss, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d) -> "GbmModel":
        return cls(d["init"], [DecisionTree.from_dict(t) for t in d["trees"]], d["learning_rate"],
                   d["n_trees"], d["max_depth"], list(d.get("train_loss", [])))


def balanced_weights(y) -> np.ndarray:
    """Per-row weights inverse to class frequency, mean weight 1."""
    y = np.asarray(y, float)
    n, pos = len(y), y.sum()
    return np.where(y > 0.5, n / (2.0 * pos), n / (2.0 * (n - pos)))


def _log_loss(y, f, w) -> float:
    per = np.maximum(f, 0.0) - f * y + np.log1p(np.exp(-np.abs(f)))
    return float(np.sum(w * per) / np.sum(w))


def gbm_fit(X, y, n_trees: int = 200, learning_rate: float = 0.1, max_depth: int = 3,
            min_samples_leaf: int = 1, class_weight: str | None = "balanced", seed: int = 0) -> GbmModel:
    """Logistic-loss boosting; one Newton step per leaf.

    Starts from the log-odds of the base rate. Each round fits a regression tree
    to the residuals ``y - p`` and sets every leaf to
    ``sum(w r) / max(sum(w p (1 - p)), 1e-12)``.
    ``train_loss[k]`` is the weighted log-loss after ``k`` rounds.
    """
    X = np.asarray(X, float)
    y = _check_binary(y)
    pos = y.mean()
    if pos in (0.0, 1.0):
        raise SingleClass("gradient boosting needs both classes")
    w = balanced_weights(y) if class_weight == "balanced" else np.ones(len(y))
    init = float(np.log(pos / (1 - pos)))
    f = np.full(len(y), init)
    pre = presort(X)
    trees = []
    losses = [_log_loss(y, f, w)]
    for k in range(n_trees):
        p = expit(f)
        r = y - p
        h = p * (1 - p)
        tree = tree_fit(X, r, max_depth, min_samples_leaf, w, None, seed, pre)
        leaf = tree.apply(X)
        num = np.bincount(leaf, weights=w * r, minlength=tree.n_nodes)
        den = np.bincount(leaf, weights=w * h, minlength=tree.n_nodes)
        is_leaf = tree.feature < 0
        tree.value = np.where(is_leaf, num / np.maximum(den, 1e-12), 0.0)
        f = f + learning_rate * tree.value[leaf]
        trees.append(tree)
        losses.append(_log_loss(y, f, w))
    return GbmModel(init, trees, learning_rate, n_trees, max_depth, losses)


def gbm_predict_proba(model: GbmModel, X) -> np.ndarray:
    return model.predict_proba(X)


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), sort_keys=True), encoding="utf-8")


def load_model(path):
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("version") != MODEL_VERSION:
        raise UsageError(f"{path}: unsupported model version")
    return {"random_forest": RfModel, "gradient_boosting": GbmModel}[d["kind"]].from_dict(d)
