"""Interventional TreeSHAP, a subset-enumeration oracle and out-of-fold SHAP.

For a foreground row ``x`` and a background row ``r`` each tree defines a
game whose coalition value is the tree output at the hybrid row taking ``x``
on the coalition and ``r`` elsewhere.  Walking the tree, a node on a feature
where ``x`` and ``r`` route differently forks the walk: one branch commits the
feature to ``x`` and the other to ``r``.  A leaf with value ``v`` reached with
``a`` features committed to ``x`` and ``b`` to ``r`` is an indicator game, so
each ``x`` feature gains ``v * (a-1)! b! / (a+b)!`` and each ``r`` feature
loses ``v * a! (b-1)! / (a+b)!``.  Averaging over background rows gives the
interventional Shapley values, which sum to ``f(x) - mean_r f(r)`` exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba
import numpy as np

from .data import Dataset, make_folds, read_matrix_csv, write_matrix_csv
from .errors import ConfigError, DataError
from .gbt import Ensemble, GbtConfig, fit
from .rng import RngStream

MAX_BRUTE_FORCE_FEATURES = 20
MAX_TREE_DEPTH = 64
DEFAULT_BACKGROUND = 256


def _weight_tables(size: int):
    pos = np.zeros((size + 1, size + 1))
    neg = np.zeros((size + 1, size + 1))
    for a in range(size + 1):
        for b in range(size + 1):
            total = math.factorial(a + b)
            if a >= 1:
                pos[a, b] = math.factorial(a - 1) * math.factorial(b) / total
            if b >= 1:
                neg[a, b] = math.factorial(a) * math.factorial(b - 1) / total
    return pos, neg


_W_POS, _W_NEG = _weight_tables(MAX_TREE_DEPTH)


# recursive: numba cannot reload self-recursive functions from its disk cache
@numba.njit
def _walk(node, x, r, feature, threshold, left, right, value, in_x, in_r,
          stack_x, nx, stack_r, nr, w_pos, w_neg, out):
    f = feature[node]
    if f < 0:
        v = value[node]
        if v == 0.0 or nx + nr == 0:
            return
        if nx > 0:
            wp = v * w_pos[nx, nr]
            for i in range(nx):
                out[stack_x[i]] += wp
        if nr > 0:
            wn = v * w_neg[nx, nr]
            for i in range(nr):
                out[stack_r[i]] -= wn
        return
    t = threshold[node]
    x_left = x[f] < t
    if in_x[f]:
        nxt = left[node] if x_left else right[node]
        _walk(nxt, x, r, feature, threshold, left, right, value, in_x, in_r,
              stack_x, nx, stack_r, nr, w_pos, w_neg, out)
        return
    r_left = r[f] < t
    if in_r[f]:
        nxt = left[node] if r_left else right[node]
        _walk(nxt, x, r, feature, threshold, left, right, value, in_x, in_r,
              stack_x, nx, stack_r, nr, w_pos, w_neg, out)
        return
    if x_left == r_left:
        nxt = left[node] if x_left else right[node]
        _walk(nxt, x, r, feature, threshold, left, right, value, in_x, in_r,
              stack_x, nx, stack_r, nr, w_pos, w_neg, out)
        return
    in_x[f] = True
    stack_x[nx] = f
    _walk(left[node] if x_left else right[node], x, r, feature, threshold, left, right,
          value, in_x, in_r, stack_x, nx + 1, stack_r, nr, w_pos, w_neg, out)
    in_x[f] = False
    in_r[f] = True
    stack_r[nr] = f
    _walk(left[node] if r_left else right[node], x, r, feature, threshold, left, right,
          value, in_x, in_r, stack_x, nx, stack_r, nr + 1, w_pos, w_neg, out)
    in_r[f] = False


@numba.njit
def _walk_batch(xs, bg, feature, threshold, left, right, value, roots, tree_class,
                k, scale, w_pos, w_neg):
    n, p = xs.shape
    m = bg.shape[0]
    out = np.zeros((n, p, k))
    in_x = np.zeros(p, dtype=np.bool_)
    in_r = np.zeros(p, dtype=np.bool_)
    stack_x = np.zeros(w_pos.shape[0], dtype=np.int64)
    stack_r = np.zeros(w_pos.shape[0], dtype=np.int64)
    acc = np.zeros(p)
    for s in range(n):
        for t in range(roots.shape[0]):
            acc[:] = 0.0
            for j in range(m):
                _walk(roots[t], xs[s], bg[j], feature, threshold, left, right, value,
                      in_x, in_r, stack_x, 0, stack_r, 0, w_pos, w_neg, acc)
            c = tree_class[t]
            for i in range(p):
                out[s, i, c] += acc[i]
        for i in range(p):
            for c in range(k):
                out[s, i, c] = out[s, i, c] * scale / m
    return out


@dataclass(frozen=True, eq=False)
class LeafTable:
    """Every leaf of an ensemble with the box its root path carves out.

    For leaf ``j`` the ``n_feat[j]`` distinct path features are
    ``feat[j, :n_feat[j]]`` and a row reaches the leaf along that feature's
    splits iff ``lo <= x[f] < hi``.
    """

    value: np.ndarray
    leaf_class: np.ndarray
    n_feat: np.ndarray
    feat: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @property
    def width(self) -> int:
        return self.feat.shape[1]

    @classmethod
    def from_ensemble(cls, e: Ensemble) -> "LeafTable":
        rows = []
        for round_trees in e.trees:
            for c, tree in enumerate(round_trees):
                stack = [(0, {})]
                while stack:
                    node, box = stack.pop()
                    f = int(tree.split_feature[node])
                    if f < 0:
                        rows.append((float(tree.leaf_value[node]), c, box))
                        continue
                    t = float(tree.threshold[node])
                    lo, hi = box.get(f, (-np.inf, np.inf))
                    right_box = dict(box)
                    right_box[f] = (max(lo, t), hi)
                    left_box = dict(box)
                    left_box[f] = (lo, min(hi, t))
                    stack.append((int(tree.right[node]), right_box))
                    stack.append((int(tree.left[node]), left_box))
        width = max([len(b) for _, _, b in rows] + [1])
        n = len(rows)
        value = np.zeros(n)
        leaf_class = np.zeros(n, dtype=np.int64)
        n_feat = np.zeros(n, dtype=np.int64)
        feat = np.zeros((n, width), dtype=np.int64)
        lo = np.zeros((n, width))
        hi = np.zeros((n, width))
        for j, (v, c, box) in enumerate(rows):
            value[j], leaf_class[j], n_feat[j] = v, c, len(box)
            for slot, f in enumerate(sorted(box)):
                feat[j, slot] = f
                lo[j, slot], hi[j, slot] = box[f]
        return cls(value, leaf_class, n_feat, feat, lo, hi)


@numba.njit(cache=True)
def _box_mask(row, j, n_feat, feat, lo, hi):
    mask = 0
    for slot in range(n_feat[j]):
        v = row[feat[j, slot]]
        if lo[j, slot] <= v and v < hi[j, slot]:
            mask |= 1 << slot
    return mask


@numba.njit(cache=True)
def _pattern_counts(bg, n_feat, feat, lo, hi, width):
    counts = np.zeros((n_feat.shape[0], 1 << width), dtype=np.int64)
    for j in range(n_feat.shape[0]):
        for r in range(bg.shape[0]):
            counts[j, _box_mask(bg[r], j, n_feat, feat, lo, hi)] += 1
    return counts


@numba.njit(cache=True)
def _popcount(v):
    c = 0
    while v:
        v &= v - 1
        c += 1
    return c


@numba.njit(cache=True, parallel=True)
def _leaf_shap_batch(xs, value, leaf_class, n_feat, feat, lo, hi, counts, k, scale,
                     w_pos, w_neg):
    n, p = xs.shape
    out = np.zeros((n, p, k))
    for s in numba.prange(n):
        x = xs[s]
        for j in range(value.shape[0]):
            v = value[j]
            nf = n_feat[j]
            if v == 0.0 or nf == 0:
                continue
            c = leaf_class[j]
            full = (1 << nf) - 1
            xmask = _box_mask(x, j, n_feat, feat, lo, hi)
            for pat in range(1 << nf):
                cnt = counts[j, pat]
                # a feature failing for both x and r makes the leaf unreachable
                if cnt == 0 or (xmask | pat) != full:
                    continue
                x_only = xmask & ~pat
                r_only = pat & ~xmask
                a = _popcount(x_only)
                b = _popcount(r_only)
                if a + b == 0:
                    continue
                if a > 0:
                    wp = v * cnt * w_pos[a, b]
                    for slot in range(nf):
                        if x_only & (1 << slot):
                            out[s, feat[j, slot], c] += wp
                if b > 0:
                    wn = v * cnt * w_neg[a, b]
                    for slot in range(nf):
                        if r_only & (1 << slot):
                            out[s, feat[j, slot], c] -= wn
        for i in range(p):
            for c in range(k):
                out[s, i, c] = out[s, i, c] * scale
    return out


# Above this many distinct features on one root-to-leaf path the 2**width
# pattern table stops paying off and the per-row tree walk is used instead.
MAX_PATTERN_WIDTH = 12


def shap_batch(e: Ensemble, xs, background, method: str = "auto") -> np.ndarray:
    """Interventional SHAP values for every row of ``xs``; shape (n, p, k).

    ``method="leaf"`` aggregates background rows into per-leaf patterns first
    (fast for shallow trees); ``method="walk"`` runs the two-path traversal for
    every (row, background row, tree) triple.
    """
    xs = np.ascontiguousarray(np.atleast_2d(np.asarray(xs, dtype=np.float64)))
    bg = np.ascontiguousarray(np.atleast_2d(np.asarray(background, dtype=np.float64)))
    if bg.shape[0] == 0:
        raise DataError("background set is empty")
    if xs.shape[1] != e.p or bg.shape[1] != e.p:
        raise DataError(f"expected {e.p} features")
    m = bg.shape[0]
    if e.rounds == 0:
        return np.zeros((xs.shape[0], e.p, e.k))
    table = LeafTable.from_ensemble(e) if method != "walk" else None
    if method == "walk" or (method == "auto" and table.width > MAX_PATTERN_WIDTH):
        pk = e.packed
        return _walk_batch(xs, bg, pk.feature, pk.threshold, pk.left, pk.right, pk.value,
                           pk.roots, pk.tree_class, e.k, float(e.eta), _W_POS, _W_NEG)
    counts = _pattern_counts(bg, table.n_feat, table.feat, table.lo, table.hi, table.width)
    return _leaf_shap_batch(xs, table.value, table.leaf_class, table.n_feat, table.feat,
                            table.lo, table.hi, counts, e.k, float(e.eta) / m,
                            _W_POS, _W_NEG)


def shap_single(e: Ensemble, x, background) -> np.ndarray:
    """Interventional SHAP values of one row; shape (p, k).

    The base score contributes nothing, so for every class
    ``phi.sum(axis=0) == margin(x) - mean(margin(background))``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("shap_single expects a single p-vector")
    return shap_batch(e, x[None, :], background)[0]


def brute_force_shapley(model_eval: Callable, x, background, p: Optional[int] = None,
                        batched: bool = False) -> np.ndarray:
    """Exact Shapley values by enumerating all ``2**p`` coalitions.

    The coalition value is the mean model output over background rows with the
    coalition's features replaced by ``x``.  ``model_eval`` maps a p-vector to
    a k-vector (or scalar); with ``batched=True`` it is called once on the full
    stack of hybrid rows instead.
    """
    x = np.asarray(x, dtype=np.float64)
    bg = np.atleast_2d(np.asarray(background, dtype=np.float64))
    p = x.shape[0] if p is None else p
    if p > MAX_BRUTE_FORCE_FEATURES:
        raise ConfigError(f"brute force refuses p={p} > {MAX_BRUTE_FORCE_FEATURES}")
    if bg.shape[0] == 0:
        raise DataError("background set is empty")
    m = bg.shape[0]
    n_sets = 1 << p
    masks = ((np.arange(n_sets)[:, None] >> np.arange(p)[None, :]) & 1).astype(bool)
    hybrids = np.where(masks[:, None, :], x[None, None, :], bg[None, :, :])
    flat = hybrids.reshape(n_sets * m, p)
    if batched:
        outputs = np.asarray(model_eval(flat), dtype=np.float64).reshape(n_sets * m, -1)
    else:
        outputs = np.array([np.atleast_1d(model_eval(row)) for row in flat], dtype=np.float64)
    k = outputs.shape[1]
    v = outputs.reshape(n_sets, m, k).mean(axis=1)

    fact = [math.factorial(i) for i in range(p + 1)]
    sizes = masks.sum(axis=1)
    phi = np.zeros((p, k))
    for i in range(p):
        bit = 1 << i
        without = np.flatnonzero((np.arange(n_sets) & bit) == 0)
        weights = np.array([fact[s] * fact[p - s - 1] / fact[p] for s in sizes[without]])
        phi[i] = weights @ (v[without | bit] - v[without])
    return phi


@dataclass(eq=False)
class ShapTensor:
    """Out-of-fold SHAP values, shape (n, p, k), in margin units.

    ``base_values`` is the class-wise mean of the fold-model base values.  When
    the tensor comes from :func:`cv_shap`, ``sample_base`` holds each row's own
    run-averaged base so ``sample_base + values.sum(1)`` reproduces
    ``oof_margins`` exactly.
    """

    values: np.ndarray
    base_values: np.ndarray
    feature_names: Sequence[str] = field(default_factory=tuple)
    class_names: Sequence[str] = field(default_factory=tuple)
    oof_margins: Optional[np.ndarray] = None
    sample_base: Optional[np.ndarray] = None
    run_additivity: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.base_values = np.asarray(self.base_values, dtype=np.float64)
        n, p, k = self.values.shape
        if self.base_values.shape != (k,):
            raise DataError("base_values must have one entry per class")
        self.feature_names = tuple(self.feature_names) or tuple(f"Feature {i}" for i in range(p))
        self.class_names = tuple(self.class_names) or tuple(f"Class {c}" for c in range(k))
        if len(self.feature_names) != p or len(self.class_names) != k:
            raise DataError("feature/class names do not match the tensor shape")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def k(self) -> int:
        return self.values.shape[2]

    def reconstructed(self) -> np.ndarray:
        """``base + sum over features``; shape (n, k)."""
        return self.base_values[None, :] + self.values.sum(axis=1)

    def flatten(self) -> np.ndarray:
        """(n, p*k) matrix, feature-major and class-minor."""
        return self.values.reshape(self.n, self.p * self.k)

    def column_names(self) -> list[str]:
        return [f"{f}|{c}" for f in self.feature_names for c in self.class_names]

    def save(self, shap_path, base_path) -> None:
        write_matrix_csv(shap_path, self.flatten(), self.column_names(), index=range(self.n))
        write_matrix_csv(base_path, self.base_values[None, :], list(self.class_names))

    @classmethod
    def load(cls, shap_path, base_path) -> "ShapTensor":
        flat, names, _ = read_matrix_csv(shap_path)
        base, class_names, _ = read_matrix_csv(base_path)
        k = len(class_names)
        if k == 0 or len(names) % k:
            raise DataError("shap.csv columns do not match base_values.csv classes")
        p = len(names) // k
        feature_names = [names[i * k].rsplit("|", 1)[0] for i in range(p)]
        expected = [f"{f}|{c}" for f in feature_names for c in class_names]
        if names != expected:
            raise DataError("shap.csv columns are not in feature-major, class-minor order")
        return cls(flat.reshape(flat.shape[0], p, k), base[0], feature_names, class_names)


@dataclass(eq=False)
class ShapRun:
    """One out-of-fold pass; ``sample_base`` is each row's fold-model base value."""

    values: np.ndarray
    sample_base: np.ndarray
    oof_margins: np.ndarray
    max_additivity_error: float


def draw_background(train_rows: np.ndarray, size: int, rng: RngStream) -> np.ndarray:
    """Seeded sample without replacement of at most ``size`` training rows."""
    m = min(len(train_rows), size)
    return np.sort(train_rows[rng.choice(len(train_rows), m)])


def oof_shap_run(d: Dataset, cfg: GbtConfig, folds, rng: RngStream,
                 background: int = DEFAULT_BACKGROUND, fitter: Optional[Callable] = None) -> ShapRun:
    """Fit on each fold's complement and explain the fold's rows.

    ``fitter(train, cfg)`` replaces :func:`fit` (the pipeline uses it to fall
    back to a constant model on degenerate folds).
    """
    fitter = fitter or fit
    n, p, k = d.n, d.p, d.k
    values = np.zeros((n, p, k))
    margins = np.zeros((n, k))
    sample_base = np.zeros((n, k))
    worst = 0.0
    for fold in range(folds.l):
        test_idx = folds.members(fold)
        train_idx = folds.complement(fold)
        model = fitter(d.subset(train_idx), cfg)
        bg = d.features[draw_background(train_idx, background, rng.derive(fold))]
        base = model.predict_margins(bg).mean(axis=0)
        phi = shap_batch(model, d.features[test_idx], bg)
        f_x = model.predict_margins(d.features[test_idx])
        worst = max(worst, float(np.max(np.abs(phi.sum(axis=1) - (f_x - base)))))
        values[test_idx] = phi
        margins[test_idx] = f_x
        sample_base[test_idx] = base
    return ShapRun(values, sample_base, margins, worst)


def average_runs(runs: Sequence[ShapRun], d: Dataset) -> ShapTensor:
    """Mean of several runs; summing then dividing keeps identical runs exact."""
    values = sum(r.values for r in runs) / len(runs)
    sample_base = sum(r.sample_base for r in runs) / len(runs)
    oof = sum(r.oof_margins for r in runs) / len(runs)
    return ShapTensor(values, sample_base.mean(axis=0), d.feature_names, d.class_names,
                      oof, sample_base, [r.max_additivity_error for r in runs])


def cv_shap(d: Dataset, cfg: GbtConfig = GbtConfig(), l: int = 5, repeats: int = 5,
            rng: Optional[RngStream] = None, background: int = DEFAULT_BACKGROUND,
            fitter: Optional[Callable] = None) -> ShapTensor:
    """Repeated out-of-fold SHAP tensor averaged across ``repeats`` random partitions."""
    if d.labels is None:
        raise DataError("cv_shap needs labels")
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    rng = rng or RngStream(0)
    runs = []
    for rep in range(repeats):
        folds = make_folds(d.n, l, rng.derive(2 * rep))
        runs.append(oof_shap_run(d, cfg, folds, rng.derive(2 * rep + 1), background, fitter))
    return average_runs(runs, d)


def mean_abs_shap(t: ShapTensor) -> np.ndarray:
    """Mean |SHAP| per (feature, class); shape (p, k)."""
    return np.abs(t.values).mean(axis=0)


def feature_importance(t: ShapTensor) -> np.ndarray:
    """Mean |SHAP| summed over classes; one total per feature."""
    return mean_abs_shap(t).sum(axis=1)
