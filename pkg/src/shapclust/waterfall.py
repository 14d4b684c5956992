"""Classic and k-dimensional waterfall paths, their projections and heatmap rows.

A sample's SHAP matrix (p features x k classes) becomes a path in class space:
it starts at the base-value vector and each segment adds one feature's
k-vector, largest Euclidean norm first, ending at the model output.  Paths are
viewed either on two chosen class axes or on the top-two principal directions
of all path vertices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .cluster import ClusterLabels
from .data import Dataset
from .embed import principal_axes
from .errors import ConfigError, DataError, NumericError
from .shap import ShapTensor


@dataclass(frozen=True)
class Segment:
    feature: str
    delta: np.ndarray
    feature_index: int = -1  # -1 for the aggregated tail


@dataclass(frozen=True, eq=False)
class WaterfallPath:
    anchor: np.ndarray
    segments: tuple
    vertices: np.ndarray  # (m + 1, k); vertices[0] is the anchor
    tag: object = None
    class_names: Sequence[str] = ()

    @property
    def k(self) -> int:
        return len(self.anchor)

    @property
    def endpoint(self) -> np.ndarray:
        return self.vertices[-1]

    def feature_order(self) -> list[int]:
        return [s.feature_index for s in self.segments if s.feature_index >= 0]


@dataclass(frozen=True, eq=False)
class ProjectedPath:
    vertices2d: np.ndarray
    axis_labels: tuple
    tag: object = None
    segment_names: tuple = ()
    loadings: Optional[np.ndarray] = None
    explained_variance: Optional[np.ndarray] = None


def _path_from_deltas(anchor, names, indices, deltas, tag, class_names) -> WaterfallPath:
    anchor = np.asarray(anchor, dtype=np.float64)
    steps = np.vstack([anchor[None, :]] + [d[None, :] for d in deltas])
    vertices = np.cumsum(steps, axis=0)
    segs = tuple(Segment(nm, np.asarray(d, dtype=np.float64), int(ix))
                 for nm, ix, d in zip(names, indices, deltas))
    return WaterfallPath(anchor, segs, vertices, tag, tuple(class_names))


def feature_ranking(phi: np.ndarray) -> np.ndarray:
    """Feature indices by descending Euclidean norm of their k-vector; ties to the lower index."""
    norms = np.sqrt(np.sum(np.asarray(phi, dtype=np.float64) ** 2, axis=1))
    return np.argsort(-norms, kind="stable")


def build_path(phi, base, top_m: int = 8, feature_names: Optional[Sequence[str]] = None,
               tag=None, class_names: Sequence[str] = (),
               order: Optional[Sequence[int]] = None) -> WaterfallPath:
    """Waterfall path of one SHAP matrix.

    The ``top_m`` largest features become individual segments and the rest are
    summed into one trailing "other features" segment.  ``order`` overrides the
    norm-based ranking (used to hold an ordering fixed across projections).
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
    base = np.atleast_1d(np.asarray(base, dtype=np.float64))
    p, k = phi.shape
    if base.shape != (k,):
        raise DataError(f"base must have {k} entries")
    if top_m < 1:
        raise ConfigError("top_m must be >= 1")
    top_m = min(top_m, p)
    names = list(feature_names) if feature_names is not None else [f"Feature {i}" for i in range(p)]
    ranking = np.asarray(order if order is not None else feature_ranking(phi))
    head, tail = ranking[:top_m], ranking[top_m:]
    seg_names = [names[i] for i in head]
    indices = list(head)
    deltas = [phi[i] for i in head]
    if len(tail):
        seg_names.append(f"{len(tail)} other features")
        indices.append(-1)
        deltas.append(phi[tail].sum(axis=0))
    return _path_from_deltas(base, seg_names, indices, deltas, tag, class_names)


def classic_waterfall(phi, base: float, top_m: int = 8,
                      feature_names: Optional[Sequence[str]] = None) -> WaterfallPath:
    """One-dimensional waterfall: ordering by |SHAP| and cumulative bar ends."""
    phi = np.asarray(phi, dtype=np.float64).reshape(-1, 1)
    return build_path(phi, [float(base)], top_m, feature_names)


def cluster_mean_paths(t: ShapTensor, labels, top_m: int = 8) -> list[WaterfallPath]:
    """One path per cluster from the members' mean SHAP matrix (noise excluded)."""
    lab = np.asarray(labels.labels if isinstance(labels, ClusterLabels) else labels)
    if lab.shape != (t.n,):
        raise DataError("labels length does not match the tensor")
    ids = sorted(int(c) for c in np.unique(lab) if c >= 0)
    if not ids:
        raise DataError("every sample is noise; no cluster paths to draw")
    paths = []
    for c in ids:
        mean_phi = t.values[lab == c].mean(axis=0)
        paths.append(build_path(mean_phi, t.base_values, top_m, t.feature_names,
                                tag=c, class_names=t.class_names))
    return paths


def project_pairwise(path: WaterfallPath, class_a: int, class_b: int) -> ProjectedPath:
    k = path.k
    if class_a == class_b:
        raise ConfigError("pairwise projection needs two different classes")
    if not (0 <= class_a < k and 0 <= class_b < k):
        raise ConfigError(f"class indices must lie in 0..{k - 1}")
    names = path.class_names or tuple(f"Class {c}" for c in range(k))
    return ProjectedPath(path.vertices[:, [class_a, class_b]].copy(),
                         (names[class_a], names[class_b]), path.tag,
                         tuple(s.feature for s in path.segments))


def project_pca(paths: Sequence[WaterfallPath]) -> list[ProjectedPath]:
    """Project paths onto the top-two principal directions of their vertices.

    Vertices are measured from each path's anchor and not re-centred, so the
    average prediction stays at the origin.  The class-axis loadings (k x 2)
    are attached for biplot arrows.
    """
    if not paths:
        raise DataError("no paths to project")
    k = paths[0].k
    if k < 2:
        raise ConfigError("PCA projection needs k >= 2")
    stacked = np.vstack([p.vertices - p.anchor[None, :] for p in paths])
    if not np.any(stacked):
        raise NumericError("all path vertices coincide; PCA projection is undefined")
    loadings, variances = principal_axes(stacked, 2, center=False)
    total = float(np.sum(stacked ** 2) / stacked.shape[0])
    explained = variances / total if total > 0 else variances
    out = []
    for p in paths:
        coords = (p.vertices - p.anchor[None, :]) @ loadings
        out.append(ProjectedPath(coords, ("PC1", "PC2"), p.tag,
                                 tuple(s.feature for s in p.segments), loadings, explained))
    return out


def heatmap_data(d: Dataset, labels) -> tuple[np.ndarray, list[int]]:
    """Mean raw feature vector per non-noise cluster, rows ordered by cluster id."""
    lab = np.asarray(labels.labels if isinstance(labels, ClusterLabels) else labels)
    if lab.shape != (d.n,):
        raise DataError("labels length does not match the data")
    ids = sorted(int(c) for c in np.unique(lab) if c >= 0)
    if not ids:
        raise DataError("every sample is noise; heatmap is empty")
    rows = np.vstack([d.features[lab == c].mean(axis=0) for c in ids])
    return rows, ids


def paths_table(paths: Sequence[WaterfallPath]) -> tuple[list[str], list[list]]:
    """Long-format rows (tag, step, feature, delta..., vertex...) for paths.csv."""
    k = paths[0].k if paths else 0
    names = paths[0].class_names if paths and paths[0].class_names else [f"Class {c}" for c in range(k)]
    header = ["path", "step", "feature"] + [f"delta|{c}" for c in names] + [f"vertex|{c}" for c in names]
    rows = []
    for p in paths:
        rows.append([p.tag, 0, "base"] + [0.0] * k + list(p.vertices[0]))
        for j, seg in enumerate(p.segments, start=1):
            rows.append([p.tag, j, seg.feature] + list(seg.delta) + list(p.vertices[j]))
    return header, rows
