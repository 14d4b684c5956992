"""Multi-class gradient-boosted regression trees with a softmax objective.

Each round computes softmax probabilities from the current margins and grows
one second-order regression tree per class on the gradients ``p - y`` and
hessians ``p (1 - p)``.  Splits are found by exact greedy enumeration over the
sorted unique values of every feature, thresholds sit at midpoints, and rows
route left when ``x[f] < threshold``.  Ties in gain keep the lowest feature
index and then the lowest threshold, so fitting is a pure function of the data
and the configuration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numba
import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError

FORMAT_TAG = "shapclust-gbt/1"


@dataclass(frozen=True)
class GbtConfig:
    rounds: int = 100
    eta: float = 0.3
    max_depth: int = 4
    lam: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not 0.0 < self.eta <= 1.0:
            raise ConfigError("eta must lie in (0, 1]")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if self.lam < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ConfigError("lambda, gamma and min_child_weight must be >= 0")


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Array-of-fields tree; node 0 is the root, ``split_feature == -1`` marks a leaf."""

    split_feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.split_feature)

    def is_leaf(self, node: int) -> bool:
        return self.split_feature[node] < 0

    def predict_row(self, x) -> float:
        node = 0
        while self.split_feature[node] >= 0:
            if x[self.split_feature[node]] < self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        return float(self.leaf_value[node])

    def features_used(self) -> set[int]:
        return {int(f) for f in self.split_feature if f >= 0}

    def to_records(self) -> list[dict]:
        return [
            {
                "split_feature": int(self.split_feature[i]),
                "threshold": float(self.threshold[i]),
                "left": int(self.left[i]),
                "right": int(self.right[i]),
                "leaf_value": float(self.leaf_value[i]),
                "cover": float(self.cover[i]),
            }
            for i in range(self.n_nodes)
        ]

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> "RegressionTree":
        def col(key, dtype):
            return np.array([r[key] for r in records], dtype=dtype)

        tree = cls(
            col("split_feature", np.int64),
            col("threshold", np.float64),
            col("left", np.int64),
            col("right", np.int64),
            col("leaf_value", np.float64),
            col("cover", np.float64),
        )
        tree.validate()
        return tree

    @classmethod
    def stump(cls, feature: int, threshold: float, left_value: float, right_value: float,
              cover: float = 1.0) -> "RegressionTree":
        return cls(
            np.array([feature, -1, -1]),
            np.array([threshold, 0.0, 0.0]),
            np.array([1, -1, -1]),
            np.array([2, -1, -1]),
            np.array([0.0, left_value, right_value]),
            np.array([cover, cover / 2, cover / 2]),
        )

    @classmethod
    def leaf(cls, value: float) -> "RegressionTree":
        return cls(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                   np.array([value]), np.array([0.0]))

    def validate(self) -> None:
        n = self.n_nodes
        if n == 0:
            raise DataError("tree has no nodes")
        for i in range(n):
            if self.split_feature[i] >= 0:
                if not (0 < self.left[i] < n and 0 < self.right[i] < n):
                    raise DataError(f"node {i} has a missing child")
            elif not math.isfinite(self.leaf_value[i]):
                raise DataError(f"leaf {i} has a non-finite value")


@dataclass(eq=False)
class Ensemble:
    """Trained model: ``margin_c(x) = base_score[c] + eta * sum_r tree[r][c](x)``."""

    base_score: np.ndarray
    trees: list  # rounds x k RegressionTree
    eta: float
    p: int
    feature_names: Sequence[str] = field(default_factory=tuple)
    class_names: Sequence[str] = field(default_factory=tuple)
    train_loss: list = field(default_factory=list)

    def __post_init__(self):
        self.base_score = np.asarray(self.base_score, dtype=np.float64)
        if not self.feature_names:
            self.feature_names = tuple(f"Feature {i}" for i in range(self.p))
        if not self.class_names:
            self.class_names = tuple(str(c) for c in range(self.k))
        for round_trees in self.trees:
            if len(round_trees) != self.k:
                raise DataError("every boosting round needs one tree per class")

    @property
    def k(self) -> int:
        return len(self.base_score)

    @property
    def rounds(self) -> int:
        return len(self.trees)

    @cached_property
    def packed(self) -> "PackedTrees":
        return PackedTrees.from_ensemble(self)

    def predict_margins(self, x) -> np.ndarray:
        """Margins for one p-vector (returns k-vector) or an n x p matrix (n x k)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xm = np.atleast_2d(x)
        if xm.shape[1] != self.p:
            raise DataError(f"expected {self.p} features, got {xm.shape[1]}")
        pk = self.packed
        raw = _predict_packed(xm, pk.feature, pk.threshold, pk.left, pk.right, pk.value,
                              pk.roots, pk.tree_class, self.k)
        out = self.base_score[None, :] + self.eta * raw
        return out[0] if single else out

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.predict_margins(x))

    def predict_class(self, x) -> np.ndarray:
        # argmax returns the first maximum, i.e. the lowest class index on ties
        return np.argmax(self.predict_margins(x), axis=-1)

    def features_used(self) -> set[int]:
        used: set[int] = set()
        for round_trees in self.trees:
            for t in round_trees:
                used |= t.features_used()
        return used

    def to_json(self) -> str:
        doc = {
            "format": FORMAT_TAG,
            "k": self.k,
            "p": self.p,
            "eta": self.eta,
            "base_score": [float(v) for v in self.base_score],
            "feature_names": list(self.feature_names),
            "class_names": list(self.class_names),
            "train_loss": [float(v) for v in self.train_loss],
            "trees": [[{"nodes": t.to_records()} for t in rt] for rt in self.trees],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Ensemble":
        doc = json.loads(text)
        if doc.get("format") != FORMAT_TAG:
            raise DataError(f"not a {FORMAT_TAG} model file")
        trees = [[RegressionTree.from_records(t["nodes"]) for t in rt] for rt in doc["trees"]]
        return cls(np.array(doc["base_score"]), trees, float(doc["eta"]), int(doc["p"]),
                   tuple(doc["feature_names"]), tuple(doc["class_names"]),
                   list(doc.get("train_loss", [])))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Ensemble":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


@dataclass(frozen=True, eq=False)
class PackedTrees:
    """All trees concatenated into flat arrays with absolute child indices.

    Trees are stored round-major then class, ``roots[t]`` is the first node of
    tree ``t`` and ``tree_class[t]`` its output class.  Leaf values are raw,
    not yet scaled by the learning rate.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    tree_class: np.ndarray

    @classmethod
    def from_ensemble(cls, e: Ensemble) -> "PackedTrees":
        feats, thrs, lefts, rights, vals, roots, classes = [], [], [], [], [], [], []
        offset = 0
        for round_trees in e.trees:
            for c, t in enumerate(round_trees):
                roots.append(offset)
                classes.append(c)
                feats.append(t.split_feature)
                thrs.append(t.threshold)
                lefts.append(np.where(t.left >= 0, t.left + offset, -1))
                rights.append(np.where(t.right >= 0, t.right + offset, -1))
                vals.append(t.leaf_value)
                offset += t.n_nodes

        def cat(parts, dtype):
            return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype)

        return cls(cat(feats, np.int64), cat(thrs, np.float64), cat(lefts, np.int64),
                   cat(rights, np.int64), cat(vals, np.float64),
                   np.array(roots, dtype=np.int64), np.array(classes, dtype=np.int64))


@numba.njit(cache=True)
def _predict_packed(x, feature, threshold, left, right, value, roots, tree_class, k):
    n = x.shape[0]
    out = np.zeros((n, k))
    for i in range(n):
        for t in range(roots.shape[0]):
            node = roots[t]
            while feature[node] >= 0:
                if x[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i, tree_class[t]] += value[node]
    return out


_SINGLE_ROOT = np.zeros(1, dtype=np.int64)


def _apply_tree(tree: RegressionTree, x: np.ndarray) -> np.ndarray:
    return _predict_packed(x, tree.split_feature, tree.threshold, tree.left, tree.right,
                           tree.leaf_value, _SINGLE_ROOT, _SINGLE_ROOT, 1)[:, 0]


def softmax(margins) -> np.ndarray:
    m = np.asarray(margins, dtype=np.float64)
    z = m - np.max(m, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_grad_hess(margins: np.ndarray, y: np.ndarray, k: int):
    """Per-class gradient and diagonal hessian of the softmax cross-entropy."""
    prob = softmax(margins)
    onehot = np.zeros_like(prob)
    onehot[np.arange(len(y)), y] = 1.0
    return prob - onehot, prob * (1.0 - prob)


def log_loss(margins: np.ndarray, y: np.ndarray) -> float:
    """Summed cross-entropy of the softmax of ``margins`` against labels ``y``."""
    m = np.asarray(margins, dtype=np.float64)
    mx = m.max(axis=1)
    lse = mx + np.log(np.exp(m - mx[:, None]).sum(axis=1))
    return float(np.sum(lse - m[np.arange(len(y)), y]))


@numba.njit(cache=True)
def _best_split(x, order, in_node, g, h, lam, gamma, min_child_weight):
    n, p = x.shape
    g_tot = 0.0
    h_tot = 0.0
    for i in range(n):
        if in_node[i]:
            g_tot += g[i]
            h_tot += h[i]
    parent = g_tot * g_tot / (h_tot + lam) if h_tot + lam > 0 else 0.0
    best_gain = 0.0
    best_f = -1
    best_t = 0.0
    for f in range(p):
        gl = 0.0
        hl = 0.0
        prev = 0.0
        seen = False
        for j in range(n):
            idx = order[f, j]
            if not in_node[idx]:
                continue
            v = x[idx, f]
            if seen and v > prev:
                gr = g_tot - gl
                hr = h_tot - hl
                if hl >= min_child_weight and hr >= min_child_weight:
                    sl = gl * gl / (hl + lam) if hl + lam > 0 else 0.0
                    sr = gr * gr / (hr + lam) if hr + lam > 0 else 0.0
                    gain = 0.5 * (sl + sr - parent) - gamma
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        t = prev + (v - prev) * 0.5
                        if t <= prev:
                            t = v
                        best_t = t
            gl += g[idx]
            hl += h[idx]
            prev = v
            seen = True
    return best_f, best_t, best_gain, g_tot, h_tot


def _leaf_weight(g_sum: float, h_sum: float, lam: float) -> float:
    denom = h_sum + lam
    return -g_sum / denom if denom > 0 else 0.0


def grow_tree(x: np.ndarray, order: np.ndarray, g: np.ndarray, h: np.ndarray,
              cfg: GbtConfig, rows: Optional[np.ndarray] = None) -> RegressionTree:
    """Grow one regression tree on gradients ``g`` and hessians ``h``.

    ``order`` holds a stable argsort of every column (shape p x n).  Nodes are
    numbered in depth-first pre-order.
    """
    n = x.shape[0]
    mask = np.ones(n, dtype=np.bool_) if rows is None else rows.copy()
    feat, thr, left, right, val, cover = [], [], [], [], [], []

    def build(node_mask: np.ndarray, depth: int) -> int:
        node = len(feat)
        for col in (feat, thr, left, right, val, cover):
            col.append(None)
        f, t, gain, g_sum, h_sum = _best_split(x, order, node_mask, g, h, cfg.lam,
                                               cfg.gamma, cfg.min_child_weight)
        cover[node] = h_sum
        if depth >= cfg.max_depth or f < 0:
            feat[node], thr[node], left[node], right[node] = -1, 0.0, -1, -1
            val[node] = _leaf_weight(g_sum, h_sum, cfg.lam)
            return node
        goes_left = x[:, f] < t
        feat[node], thr[node], val[node] = int(f), float(t), 0.0
        left[node] = build(node_mask & goes_left, depth + 1)
        right[node] = build(node_mask & ~goes_left, depth + 1)
        return node

    build(mask, 0)
    return RegressionTree(np.array(feat, dtype=np.int64), np.array(thr, dtype=np.float64),
                          np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                          np.array(val, dtype=np.float64), np.array(cover, dtype=np.float64))


def fit(train: Dataset, cfg: GbtConfig = GbtConfig()) -> Ensemble:
    if train.labels is None:
        raise DataError("training data has no labels")
    if train.n < 2:
        raise DataError("training set needs at least 2 rows")
    k = train.k
    y = np.asarray(train.labels)
    if k < 2 or len(np.unique(y)) < 2:
        raise DataError("training labels contain a single class")

    x = np.ascontiguousarray(train.features)
    order = np.ascontiguousarray(np.argsort(x, axis=0, kind="stable").T)
    prior = np.bincount(y, minlength=k) / len(y)
    base = np.log(np.maximum(prior, 1e-12))
    margins = np.tile(base, (train.n, 1))
    trees = []
    losses = [log_loss(margins, y)]
    for _ in range(cfg.rounds):
        g, h = softmax_grad_hess(margins, y, k)
        round_trees = []
        for c in range(k):
            tree = grow_tree(x, order, np.ascontiguousarray(g[:, c]),
                             np.ascontiguousarray(h[:, c]), cfg)
            round_trees.append(tree)
        trees.append(round_trees)
        for c, tree in enumerate(round_trees):
            margins[:, c] += cfg.eta * _apply_tree(tree, x)
        losses.append(log_loss(margins, y))
    return Ensemble(base, trees, cfg.eta, train.p, train.feature_names, train.class_names,
                    losses)


def predict_margins(e: Ensemble, x) -> np.ndarray:
    return e.predict_margins(x)


@dataclass(frozen=True, eq=False)
class ClassificationReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    class_names: Sequence[str]

    @property
    def total(self) -> int:
        return int(self.support.sum())

    @property
    def macro(self) -> tuple[float, float, float]:
        return (float(self.precision.mean()), float(self.recall.mean()), float(self.f1.mean()))

    @property
    def weighted(self) -> tuple[float, float, float]:
        w = self.support / max(self.total, 1)
        return (float(self.precision @ w), float(self.recall @ w), float(self.f1 @ w))

    def format(self, digits: int = 2) -> str:
        """Text table: per-class rows, then accuracy, macro and weighted averages."""
        width = max([len(str(c)) for c in self.class_names] + [12])
        head = f"{'':>{width}} {'precision':>9} {'recall':>9} {'f1-score':>9} {'support':>9}"
        lines = [head, ""]
        for c, name in enumerate(self.class_names):
            lines.append(f"{name:>{width}} {self.precision[c]:9.{digits}f} "
                         f"{self.recall[c]:9.{digits}f} {self.f1[c]:9.{digits}f} "
                         f"{int(self.support[c]):9d}")
        lines.append("")
        lines.append(f"{'accuracy':>{width}} {'':9} {'':9} {self.accuracy:9.{digits}f} "
                     f"{self.total:9d}")
        for label, (pr, rc, f1) in (("macro avg", self.macro), ("weighted avg", self.weighted)):
            lines.append(f"{label:>{width}} {pr:9.{digits}f} {rc:9.{digits}f} "
                         f"{f1:9.{digits}f} {self.total:9d}")
        return "\n".join(lines) + "\n"


def classification_report(y_true, y_pred, k: int,
                          class_names: Optional[Sequence[str]] = None) -> ClassificationReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise DataError("label sequences differ in length")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise DataError(f"labels must lie in 0..{k - 1}")
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    tp = np.diag(confusion).astype(np.float64)
    predicted = confusion.sum(axis=0).astype(np.float64)
    support = confusion.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    accuracy = float(tp.sum() / len(y_true)) if len(y_true) else 0.0
    names = tuple(class_names) if class_names else tuple(str(c) for c in range(k))
    return ClassificationReport(precision, recall, f1, support, accuracy, names)
