"""Two-dimensional embeddings: deterministic PCA and a UMAP-style layout."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np
from scipy.optimize import curve_fit
from scipy.spatial.distance import cdist

from .errors import ConfigError, DataError, NumericError
from .rng import STREAM_EMBED, RngStream, xoshiro_below

DIST_FLOOR = 1e-12
BISECTION_STEPS = 64
N_NEGATIVES = 5

# Least-squares (a, b) for min_dist=0.1, spread=1.0, from fit_ab(); pinned so a
# change in the fitting routine shows up as a test failure.
AB_DEFAULT = (1.5769434602697652, 0.8950608778515733)


@dataclass(frozen=True, eq=False)
class Embedding2D:
    coords: np.ndarray
    method: str
    explained_variance: Optional[np.ndarray] = None
    loadings: Optional[np.ndarray] = None


def _orient(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive.

    Exact magnitude ties go to the first such entry.
    """
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        i = int(np.argmax(np.abs(col)))
        if col[i] < 0:
            out[:, j] = -col
    return out


def principal_axes(m: np.ndarray, n_components: int = 2, center: bool = True):
    """Top principal directions of ``m`` (rows are observations).

    Returns ``(loadings, variances)`` with loadings of shape (q, n_components)
    after the sign convention.  With ``center=False`` the second-moment matrix
    about the origin is decomposed instead of the covariance.
    """
    m = np.asarray(m, dtype=np.float64)
    n, q = m.shape
    x = m - m.mean(axis=0) if center else m
    cov = x.T @ x / max(n - 1 if center else n, 1)
    evals, evecs = np.linalg.eigh(cov)
    # eigh returns ascending eigenvalues; a stable reverse sort keeps the
    # solver's column order for equal eigenvalues
    order = np.argsort(-evals, kind="stable")[:n_components]
    variances = np.clip(evals[order], 0.0, None)
    loadings = _orient(evecs[:, order])
    if loadings.shape[1] < n_components:
        pad = n_components - loadings.shape[1]
        loadings = np.hstack([loadings, np.zeros((q, pad))])
        variances = np.concatenate([variances, np.zeros(pad)])
    return loadings, variances


def pca_embed(m) -> Embedding2D:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2:
        raise DataError("PCA needs at least 2 rows")
    if m.shape[1] < 2:
        raise DataError("PCA needs at least 2 columns")
    centered = m - m.mean(axis=0)
    if not np.any(centered):
        raise NumericError("all rows are identical; PCA is undefined")
    loadings, variances = principal_axes(m)
    return Embedding2D(centered @ loadings, "pca", variances, loadings)


def fit_ab(min_dist: float = 0.1, spread: float = 1.0) -> tuple[float, float]:
    """Fit ``1 / (1 + a d**(2b))`` to the offset-exponential membership target."""
    if min_dist < 0 or spread <= 0:
        raise ConfigError("min_dist must be >= 0 and spread > 0")

    def curve(d, a, b):
        return 1.0 / (1.0 + a * d ** (2 * b))

    d = np.linspace(0, spread * 3, 300)
    target = np.where(d < min_dist, 1.0, np.exp(-(d - min_dist) / spread))
    (a, b), _ = curve_fit(curve, d, target)
    return float(a), float(b)


def knn(m: np.ndarray, k: int):
    """Exact k nearest neighbours (self excluded); ties go to the lower index."""
    d2 = cdist(m, m, "sqeuclidean")
    np.fill_diagonal(d2, np.inf)
    idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    dist = np.sqrt(np.take_along_axis(d2, idx, axis=1))
    return idx, np.maximum(dist, DIST_FLOOR)


@numba.njit(cache=True)
def _calibrate(dist, steps):
    n, k = dist.shape
    target = math.log2(k)
    rho = dist[:, 0].copy()
    sigma = np.zeros(n)
    for i in range(n):
        lo = 0.0
        hi = np.inf
        mid = 1.0
        for _ in range(steps):
            total = 0.0
            for j in range(k):
                gap = dist[i, j] - rho[i]
                total += math.exp(-gap / mid) if gap > 0 else 1.0
            if total > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                mid = mid * 2.0 if hi == np.inf else (lo + hi) / 2.0
        sigma[i] = max(mid, 1e-12)
    return rho, sigma


def fuzzy_graph(m: np.ndarray, k: int):
    """Symmetrized membership graph as ``(heads, tails, weights)`` edge arrays."""
    idx, dist = knn(m, k)
    rho, sigma = _calibrate(dist, BISECTION_STEPS)
    gaps = np.maximum(dist - rho[:, None], 0.0)
    w = np.exp(-gaps / sigma[:, None])
    n = m.shape[0]
    a = np.zeros((n, n))
    a[np.repeat(np.arange(n), k), idx.ravel()] = w.ravel()
    p = a + a.T - a * a.T
    heads, tails = np.nonzero(p)
    return heads, tails, p[heads, tails]


@numba.njit(cache=True)
def _clip(v):
    return 4.0 if v > 4.0 else (-4.0 if v < -4.0 else v)


@numba.njit(cache=True)
def _optimize(y, heads, tails, epochs_per_sample, n_epochs, a, b, state, n_neg):
    n = y.shape[0]
    dim = y.shape[1]
    next_sample = epochs_per_sample.copy()
    for epoch in range(n_epochs):
        alpha = 1.0 - epoch / n_epochs
        for e in range(heads.shape[0]):
            if epochs_per_sample[e] <= 0 or next_sample[e] > epoch:
                continue
            i = heads[e]
            j = tails[e]
            d2 = 0.0
            for c in range(dim):
                diff = y[i, c] - y[j, c]
                d2 += diff * diff
            if d2 > 0.0:
                coeff = -2.0 * a * b * d2 ** (b - 1.0) / (a * d2 ** b + 1.0)
            else:
                coeff = 0.0
            for c in range(dim):
                g = _clip(coeff * (y[i, c] - y[j, c]))
                y[i, c] += g * alpha
                y[j, c] -= g * alpha
            for _ in range(n_neg):
                t = xoshiro_below(state, n)
                if t == i:
                    continue
                d2 = 0.0
                for c in range(dim):
                    diff = y[i, c] - y[t, c]
                    d2 += diff * diff
                if d2 <= 0.0:
                    continue
                coeff = 2.0 * b / ((0.001 + d2) * (a * d2 ** b + 1.0))
                for c in range(dim):
                    y[i, c] += _clip(coeff * (y[i, c] - y[t, c])) * alpha
            next_sample[e] += epochs_per_sample[e]
    return y


def neighbor_embed(m, k: int = 15, min_dist: float = 0.1, epochs: int = 200,
                   rng: Optional[RngStream] = None, spread: float = 1.0) -> Embedding2D:
    """UMAP-style layout: fuzzy k-NN graph plus edge-sampled SGD with negatives.

    Edges are visited in a fixed order every epoch and sampled in proportion
    to their membership weight; the learning rate decays linearly to zero.
    The layout starts from PCA coordinates scaled to unit variance.
    """
    m = np.ascontiguousarray(np.asarray(m, dtype=np.float64))
    n = m.shape[0]
    if k < 2 or k >= n:
        raise ConfigError(f"neighbour count must satisfy 2 <= k < n (k={k}, n={n})")
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    rng = rng or RngStream(0, STREAM_EMBED)
    if (min_dist, spread) == (0.1, 1.0):
        a, b = AB_DEFAULT
    else:
        a, b = fit_ab(min_dist, spread)

    heads, tails, weights = fuzzy_graph(m, k)
    try:
        init = pca_embed(m).coords
    except NumericError:
        init = np.zeros((n, 2))
    scale = init.std(axis=0)
    y = np.ascontiguousarray(init / np.where(scale > 0, scale, 1.0))

    eps = np.full(weights.shape, -1.0)
    if weights.size:
        top = weights.max()
        keep = weights >= top / epochs
        eps[keep] = top / weights[keep]
    state = rng.state.copy()
    y = _optimize(y, heads.astype(np.int64), tails.astype(np.int64), eps, epochs,
                  float(a), float(b), state, N_NEGATIVES)
    if not np.all(np.isfinite(y)):
        raise NumericError("neighbour embedding diverged")
    return Embedding2D(y, "neighbor")
