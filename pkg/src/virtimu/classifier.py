"""Random forest classifier (Gini splits, bootstrap, random feature subsets).

Training is deterministic for a fixed seed: samples are ordered by their stable ids
before bootstrapping and every tree draws from its own generator derived from
(seed, tree index), so neither input order nor thread count changes the model.

Model files are JSON::

    {"schema": "virtimu.forest/1", "classes": [...], "n_features": D,
     "params": {...}, "data_hash": "<sha256>",
     "trees": [{"feature": [...], "threshold": [...], "left": [...],
                "right": [...], "counts": [[...], ...]}, ...]}

``feature`` is -1 at leaves. A sample goes left when ``x[feature] <= threshold``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._util import canonical_json, derive_rng, sha256_bytes

SCHEMA = "virtimu.forest/1"


@dataclass(frozen=True)
class TrainParams:
    n_trees: int = 100
    max_depth: int = 20
    min_samples_leaf: int = 2
    features_per_split: int | str = "sqrt"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if isinstance(self.features_per_split, str):
            if self.features_per_split != "sqrt":
                raise ValueError("features_per_split must be 'sqrt' or a positive integer")
        elif self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")

    def n_split_features(self, n_features: int) -> int:
        if self.features_per_split == "sqrt":
            return max(1, int(math.sqrt(n_features)))
        return min(int(self.features_per_split), n_features)


@dataclass(frozen=True, eq=False)
class DecisionTree:
    feature: np.ndarray  # int, -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, K) class counts of training samples reaching each node

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of X."""
        node = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return node
            r = rows[active]
            n = node[active]
            go_left = X[r, f[active]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(
            np.asarray(d["feature"], dtype=int),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=int),
            np.asarray(d["right"], dtype=int),
            np.asarray(d["counts"], dtype=np.int64),
        )


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[DecisionTree, ...]
    classes: tuple[str, ...]
    n_features: int
    params: TrainParams
    data_hash: str

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "classes": list(self.classes),
            "n_features": self.n_features,
            "params": asdict(self.params),
            "data_hash": self.data_hash,
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def model_hash(self) -> str:
        return sha256_bytes(self.to_json().encode("utf-8"))

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported model schema {d.get('schema')!r}")
        trees = tuple(DecisionTree.from_dict(t) for t in d["trees"])
        k = len(d["classes"])
        for t in trees:
            if t.counts.shape[1] != k:
                raise ValueError("tree class count disagrees with model classes")
        return cls(trees, tuple(d["classes"]), int(d["n_features"]), TrainParams(**d["params"]), d["data_hash"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ForestModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def gini_impurity(counts: Sequence[float] | np.ndarray) -> float:
    c = np.asarray(counts, dtype=float)
    if np.any(c < 0):
        raise ValueError("class counts must be nonnegative")
    total = c.sum()
    if total <= 0:
        raise ValueError("gini impurity of an empty node is undefined")
    p = c / total
    return float(1.0 - np.sum(p * p))


def _best_split(Xn: np.ndarray, yn: np.ndarray, n_classes: int, min_leaf: int):
    """Best (feature column, threshold, weighted child impurity * n) over the columns of Xn."""
    n, m = Xn.shape
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    ys = yn[order]
    onehot = ys[..., None] == np.arange(n_classes)
    left = np.cumsum(onehot, axis=0)[:-1].astype(float)  # split after position i
    total = left[-1] + onehot[-1] if n > 1 else onehot[0]
    right = total[None] - left
    nl = np.arange(1, n, dtype=float)[:, None]
    nr = n - nl
    score = (nl - (left**2).sum(-1) / nl) + (nr - (right**2).sum(-1) / nr)
    valid = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, score, np.inf).T  # (m, n-1): lowest column, then lowest threshold wins ties
    flat = int(np.argmin(score))
    col, i = divmod(flat, n - 1)
    lo, hi = xs[i, col], xs[i + 1, col]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return col, float(thr), float(score[col, i])


def _grow_tree(X: np.ndarray, y: np.ndarray, n_classes: int, params: TrainParams, rng: np.random.Generator) -> DecisionTree:
    n, d = X.shape
    idx = rng.integers(0, n, n) if params.bootstrap else np.arange(n)
    m = params.n_split_features(d)
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[np.ndarray] = []

    def new_node(c: np.ndarray) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(c)
        return len(feature) - 1

    root = new_node(np.bincount(y[idx], minlength=n_classes))
    stack = [(root, idx, 0)]
    while stack:
        node, sub, depth = stack.pop()
        c = counts[node]
        n_sub = sub.shape[0]
        if depth >= params.max_depth or np.count_nonzero(c) <= 1 or n_sub < 2 * params.min_samples_leaf:
            continue
        feats = np.sort(rng.choice(d, m, replace=False))
        found = _best_split(X[np.ix_(sub, feats)], y[sub], n_classes, params.min_samples_leaf)
        if found is None:
            continue
        col, thr, score = found
        parent = n_sub - float((c.astype(float) ** 2).sum()) / n_sub
        if parent - score <= 1e-12 * n_sub:
            continue
        f = int(feats[col])
        go_left = X[sub, f] <= thr
        ls, rs = sub[go_left], sub[~go_left]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(np.bincount(y[ls], minlength=n_classes))
        right[node] = new_node(np.bincount(y[rs], minlength=n_classes))
        stack.append((right[node], rs, depth + 1))
        stack.append((left[node], ls, depth + 1))

    return DecisionTree(
        np.array(feature, dtype=int),
        np.array(threshold, dtype=float),
        np.array(left, dtype=int),
        np.array(right, dtype=int),
        np.array(counts, dtype=np.int64).reshape(len(counts), n_classes),
    )


def _data_hash(X: np.ndarray, labels: np.ndarray, ids: np.ndarray) -> str:
    h = sha256_bytes(np.ascontiguousarray(X, dtype="<f8").tobytes())
    h = sha256_bytes((h + "\n" + "\n".join(map(str, labels)) + "\n" + "\n".join(map(str, ids))).encode("utf-8"))
    return h


def train_forest(
    X: np.ndarray,
    labels: Sequence[str],
    params: TrainParams = TrainParams(),
    ids: Sequence[str] | None = None,
    n_jobs: int = 1,
) -> ForestModel:
    """Fit a random forest on feature rows ``X`` with string class ``labels``.

    ``ids`` are stable sample identifiers (default: row positions); they fix the
    sample order used for bootstrapping.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("features must be a 2-D array (samples, features)")
    labels = np.asarray([str(v) for v in labels], dtype=object)
    if labels.shape[0] != X.shape[0]:
        raise ValueError("one label per feature row required")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    classes = tuple(sorted(set(labels.tolist())))
    if len(classes) < 2:
        raise ValueError("training needs at least two classes")
    ids = np.asarray([str(i) for i in (ids if ids is not None else range(X.shape[0]))], dtype=object)
    if len(set(ids.tolist())) != ids.shape[0]:
        raise ValueError("sample ids must be unique")
    order = np.argsort(ids.astype(str), kind="stable")
    X, labels, ids = X[order], labels[order], ids[order]
    cls_index = {c: k for k, c in enumerate(classes)}
    y = np.array([cls_index[v] for v in labels], dtype=int)

    def grow(t: int) -> DecisionTree:
        return _grow_tree(X, y, len(classes), params, derive_rng(params.seed, t))

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = tuple(pool.map(grow, range(params.n_trees)))
    else:
        trees = tuple(grow(t) for t in range(params.n_trees))
    return ForestModel(trees, classes, X.shape[1], params, _data_hash(X, labels, ids))


def vote_fractions(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """(N, K) share of trees voting for each class."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    k = len(model.classes)
    votes = np.zeros((X.shape[0], k))
    rows = np.arange(X.shape[0])
    for tree in model.trees:
        leaf_class = np.argmax(tree.counts, axis=1)  # ties -> lowest class index
        np.add.at(votes, (rows, leaf_class[tree.apply(X)]), 1.0)
    return votes / len(model.trees)


def predict(model: ForestModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predicted class labels and per-class vote fractions for each row of ``X``."""
    frac = vote_fractions(model, X)
    pred = np.asarray(model.classes, dtype=object)[np.argmax(frac, axis=1)]
    return pred, frac
