"""Small deterministic regression learners shared by every learned component.

Three kinds: exact linear least squares, a single CART regression tree and
gradient-boosted trees on squared loss. Fitted models are plain arrays so they
serialize to JSON without pickling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import InsufficientData, ModelFormatError

KINDS = ("linear_least_squares", "regression_tree", "boosted_trees")


@dataclass(frozen=True)
class RegressionLearner:
    kind: str = "boosted_trees"
    max_depth: int = 6
    min_samples_leaf: int = 5
    n_rounds: int = 50
    learning_rate: float = 0.1
    #: fraction of rows each boosting round sees (1.0 = all, no randomness)
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.max_depth < 0 or self.min_samples_leaf < 1 or self.n_rounds < 1:
            raise ValueError("invalid tree hyperparameters")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must be in (0, 1]")

    def fit(self, rows, targets) -> "FittedModel":
        X, y = _check(rows, targets)
        if self.kind == "linear_least_squares":
            A = np.c_[np.ones(len(X)), X]
            coef, *_ = np.linalg.lstsq(A, y, rcond=None)
            return FittedModel(self, X.shape[1], coef=coef.tolist())
        if self.kind == "regression_tree":
            tree = _grow(X, y, self.max_depth, self.min_samples_leaf)
            return FittedModel(self, X.shape[1], trees=[tree])
        return self._boost(X, y)

    def _boost(self, X: np.ndarray, y: np.ndarray) -> "FittedModel":
        rng = np.random.default_rng(self.seed)
        base = float(y.mean())
        pred = np.full(len(y), base)
        trees = []
        for _ in range(self.n_rounds):
            resid = y - pred
            if self.subsample < 1.0:
                m = max(1, int(round(self.subsample * len(y))))
                rows = np.sort(rng.choice(len(y), size=m, replace=False))
            else:
                rows = np.arange(len(y))
            tree = _grow(X[rows], resid[rows], self.max_depth, self.min_samples_leaf)
            tree.scale(self.learning_rate)
            trees.append(tree)
            pred += tree.predict(X)
        return FittedModel(self, X.shape[1], base=base, trees=trees)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _check(rows, targets) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(rows, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.size == 0 or len(X) == 0:
        raise InsufficientData("cannot fit on empty data")
    if X.ndim != 2:
        raise ValueError("rows must be equal-length feature vectors")
    if len(y) != len(X):
        raise ValueError(f"{len(X)} rows but {len(y)} targets")
    if np.isnan(X).any() or np.isnan(y).any():
        raise ValueError("NaN in training data")
    return X, y


@dataclass
class Tree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def add(self, feature=-1, threshold=0.0, value=0.0) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def scale(self, factor: float) -> None:
        self.value = [v * factor for v in self.value]

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X))
        node = np.zeros(len(X), dtype=int)
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        active = feat[node] >= 0
        while active.any():
            ids = np.nonzero(active)[0]
            n = node[ids]
            go_left = X[ids, feat[n]] <= thr[n]
            node[ids] = np.where(go_left, left[n], right[n])
            active[ids] = feat[node[ids]] >= 0
        out[:] = np.asarray(self.value)[node]
        return out

    def predict_one(self, row: Sequence[float]) -> float:
        feat, thr, left, right = self.feature, self.threshold, self.left, self.right
        n = 0
        while feat[n] >= 0:
            n = left[n] if row[feat[n]] <= thr[n] else right[n]
        return self.value[n]

    def to_dict(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "value": self.value}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls([int(v) for v in d["feature"]], [float(v) for v in d["threshold"]],
                   [int(v) for v in d["left"]], [int(v) for v in d["right"]],
                   [float(v) for v in d["value"]])


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Lowest-SSE split as ``(feature, threshold, sse)``; first wins ties."""
    n = len(y)
    best = None
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        cs, cs2 = np.cumsum(ys), np.cumsum(ys * ys)
        nl = np.arange(1, n)
        sl, sl2 = cs[:-1], cs2[:-1]
        sr, sr2 = cs[-1] - sl, cs2[-1] - sl2
        sse = (sl2 - sl * sl / nl) + (sr2 - sr * sr / (n - nl))
        ok = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not ok.any():
            continue
        sse = np.where(ok, sse, np.inf)
        i = int(np.argmin(sse))
        if best is None or sse[i] < best[2]:
            best = (f, float((xs[i] + xs[i + 1]) / 2.0), float(sse[i]))
    return best


def _grow(X: np.ndarray, y: np.ndarray, max_depth: int, min_leaf: int) -> Tree:
    tree = Tree()
    stack = [(tree.add(value=float(y.mean())), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        ys = y[idx]
        if depth >= max_depth or len(idx) < 2 * min_leaf:
            continue
        parent_sse = float(((ys - ys.mean()) ** 2).sum())
        split = _best_split(X[idx], ys, min_leaf)
        if split is None or parent_sse - split[2] <= 1e-12 * max(1.0, parent_sse):
            continue
        f, thr, _ = split
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = tree.add(value=float(y[li].mean()))
        tree.right[node] = tree.add(value=float(y[ri].mean()))
        stack.append((tree.right[node], ri, depth + 1))
        stack.append((tree.left[node], li, depth + 1))
    return tree


@dataclass
class FittedModel:
    learner: RegressionLearner
    n_features: int
    coef: list[float] | None = None
    base: float = 0.0
    trees: list[Tree] = field(default_factory=list)

    def predict_many(self, rows) -> np.ndarray:
        X = np.asarray(rows, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        if self.coef is not None:
            return self.coef[0] + X @ np.asarray(self.coef[1:])
        out = np.full(len(X), self.base)
        for t in self.trees:
            out += t.predict(X)
        return out

    def predict(self, row: Sequence[float]) -> float:
        if self.coef is not None or len(row) != self.n_features:
            return float(self.predict_many([row])[0])
        # scalar path; same summation order as predict_many
        row = [float(v) for v in row]
        out = self.base
        for t in self.trees:
            out += t.predict_one(row)
        return out

    def to_dict(self) -> dict:
        return {"learner": self.learner.to_dict(), "n_features": self.n_features,
                "coef": self.coef, "base": self.base,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d) -> "FittedModel":
        try:
            return cls(RegressionLearner(**d["learner"]), int(d["n_features"]), d["coef"],
                       float(d["base"]), [Tree.from_dict(t) for t in d["trees"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed learner document: {exc}") from exc


def q_error(predicted: float, actual: float) -> float:
    predicted = max(predicted, 1e-12)
    actual = max(actual, 1e-12)
    return max(predicted / actual, actual / predicted)
