"""HDBSCAN density clustering and adjusted Rand index.

The condensed tree is defined from the connected components of the mutual
reachability graph at every distance level, processed one distinct level at a
time.  Equal-weight edges therefore merge together, which makes the result
independent of which of several equal-weight minimum spanning trees was found.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, DataError

DIST_FLOOR = 1e-12
SELECTIONS = ("eom", "leaf")


@dataclass(frozen=True, eq=False)
class CondensedTree:
    """Cluster hierarchy after pruning splits smaller than ``min_cluster_size``.

    Cluster 0 is the root.  ``parent[c]`` is -1 for the root, ``birth[c]`` and
    ``death[c]`` are lambda values (1 / distance), and ``point_cluster[i]`` /
    ``point_lambda[i]`` record the last cluster point ``i`` belonged to and the
    lambda at which it left it.
    """

    parent: np.ndarray
    birth: np.ndarray
    death: np.ndarray
    size: np.ndarray
    point_cluster: np.ndarray
    point_lambda: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.parent)

    def children(self, c: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.parent == c)]

    def stability(self) -> np.ndarray:
        """Sum over members of (lambda when leaving) - (lambda at birth)."""
        stab = np.zeros(self.n_clusters)
        np.add.at(stab, self.point_cluster,
                  self.point_lambda - self.birth[self.point_cluster])
        for c in range(1, self.n_clusters):
            par = self.parent[c]
            stab[par] += self.size[c] * (self.birth[c] - self.birth[par])
        return stab


@dataclass(frozen=True, eq=False)
class ClusterLabels:
    labels: np.ndarray
    persistence: np.ndarray
    tree: CondensedTree = field(repr=False, default=None)

    @property
    def n_clusters(self) -> int:
        return len(self.persistence)

    @property
    def noise_fraction(self) -> float:
        return float(np.mean(self.labels < 0)) if len(self.labels) else 0.0


def _lam(d: float) -> float:
    return 1.0 / max(d, DIST_FLOOR)


def core_distances(dist: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance to the ``min_samples``-th nearest other point."""
    return np.sort(dist, axis=1)[:, min_samples]


def mutual_reachability(m, min_samples: int) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    dist = cdist(m, m)
    core = core_distances(dist, min_samples)
    return np.maximum(dist, np.maximum(core[:, None], core[None, :]))


def prim_mst(w: np.ndarray) -> np.ndarray:
    """Minimum spanning tree of a dense symmetric matrix; rows ``(u, v, weight)``.

    Starts at vertex 0; among equal candidates the lowest vertex index wins.
    """
    n = w.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    via = np.zeros(n, dtype=np.int64)
    edges = np.zeros((max(n - 1, 0), 3))
    current = 0
    in_tree[0] = True
    for step in range(n - 1):
        row = w[current]
        better = (~in_tree) & (row < best)
        best[better] = row[better]
        via[better] = current
        candidates = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(candidates))
        edges[step] = (via[nxt], nxt, best[nxt])
        in_tree[nxt] = True
        current = nxt
    return edges


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root


def _level_dendrogram(n: int, edges: np.ndarray):
    """Merge components one distinct weight level at a time.

    Returns ``(children, level, size)`` lists for internal nodes numbered from
    ``n`` upward; nodes below ``n`` are the points.  A node may have more than
    two children when several merges share a weight.
    """
    order = np.lexsort((np.maximum(edges[:, 0], edges[:, 1]),
                        np.minimum(edges[:, 0], edges[:, 1]), edges[:, 2]))
    edges = edges[order]
    uf = _UnionFind(n)
    node_of = list(range(n))  # union-find root -> current dendrogram node
    node_size = [1] * n
    children, level, size = [], [], []
    i = 0
    while i < len(edges):
        w = edges[i, 2]
        j = i
        while j < len(edges) and edges[j, 2] == w:
            j += 1
        batch = edges[i:j].astype(np.int64)
        # components as they stood below this level
        old = [(uf.find(int(u)), uf.find(int(v))) for u, v, _ in batch]
        old_nodes = {r: node_of[r] for pair in old for r in pair}
        for a, b in old:
            ra, rb = uf.find(a), uf.find(b)
            if ra != rb:
                uf.parent[rb] = ra
        groups: dict[int, list[int]] = {}
        for r in old_nodes:
            groups.setdefault(uf.find(r), []).append(old_nodes[r])
        for root, kids in sorted(groups.items(), key=lambda kv: min(kv[1])):
            kids = sorted(kids)
            sz = sum(node_size[c] for c in kids)
            node_of[root] = n + len(children)
            children.append(kids)
            level.append(w)
            size.append(sz)
            node_size.append(sz)
        i = j
    return children, level, size


def _leaves_under(node: int, n: int, children) -> list[int]:
    out, stack = [], [node]
    while stack:
        v = stack.pop()
        if v < n:
            out.append(v)
        else:
            stack.extend(children[v - n])
    return out


def condense(n: int, edges: np.ndarray, min_cluster_size: int) -> CondensedTree:
    children, level, size = _level_dendrogram(n, edges)
    node_size = [1] * n + size
    parent, birth, death, csize = [-1], [0.0], [0.0], [n]
    point_cluster = np.zeros(n, dtype=np.int64)
    point_lambda = np.zeros(n)
    if n == 1 or not children:
        point_lambda[:] = 0.0
        return CondensedTree(np.array(parent), np.array(birth), np.array(death),
                             np.array(csize), point_cluster, point_lambda)
    stack = [(n + len(children) - 1, 0)]  # (dendrogram node, cluster id)
    while stack:
        node, cluster = stack.pop()
        while True:
            if node < n:  # a lone point carries its cluster to the very end
                point_cluster[node] = cluster
                point_lambda[node] = _lam(0.0)
                death[cluster] = max(death[cluster], _lam(0.0))
                break
            lam = _lam(level[node - n])
            kids = children[node - n]
            big = [c for c in kids if node_size[c] >= min_cluster_size]
            for c in kids:
                if node_size[c] < min_cluster_size:
                    for pt in _leaves_under(c, n, children):
                        point_cluster[pt] = cluster
                        point_lambda[pt] = lam
            if len(big) == 1:
                node = big[0]
                continue
            death[cluster] = lam
            for c in big:
                new = len(parent)
                parent.append(cluster)
                birth.append(lam)
                death.append(0.0)
                csize.append(node_size[c])
                stack.append((c, new))
            break
    return CondensedTree(np.array(parent), np.array(birth), np.array(death),
                         np.array(csize), point_cluster, point_lambda)


def select_clusters(tree: CondensedTree, selection: str = "eom") -> list[int]:
    """Selected cluster ids; the root is never selected."""
    if selection not in SELECTIONS:
        raise ConfigError(f"selection must be one of {SELECTIONS}")
    nc = tree.n_clusters
    kids = [[] for _ in range(nc)]
    for c in range(1, nc):
        kids[tree.parent[c]].append(c)
    if selection == "leaf":
        return [c for c in range(1, nc) if not kids[c]]
    stab = tree.stability()
    selected = np.zeros(nc, dtype=bool)
    # children always have larger ids than their parent
    for c in range(nc - 1, 0, -1):
        if not kids[c]:
            selected[c] = True
            continue
        child_sum = sum(stab[k] for k in kids[c])
        if child_sum > stab[c]:
            stab[c] = child_sum
        else:
            selected[c] = True
            stack = list(kids[c])
            while stack:
                d = stack.pop()
                selected[d] = False
                stack.extend(kids[d])
    return [int(c) for c in np.flatnonzero(selected)]


def label_points(tree: CondensedTree, selected: list[int]) -> ClusterLabels:
    n = len(tree.point_cluster)
    owner = np.full(tree.n_clusters, -1)
    chosen = set(selected)
    for c in range(tree.n_clusters):
        a = c
        while a >= 0 and a not in chosen:
            a = tree.parent[a]
        owner[c] = a
    raw = owner[tree.point_cluster]
    ids = sorted(chosen, key=lambda c: (-int(np.sum(raw == c)),
                                        int(np.flatnonzero(raw == c)[0]) if np.any(raw == c) else n))
    stab = tree.stability()
    labels = np.full(n, -1, dtype=np.int64)
    for new, c in enumerate(ids):
        labels[raw == c] = new
    return ClusterLabels(labels, np.array([stab[c] for c in ids]), tree)


def _check_params(n, min_cluster_size, min_samples, selection):
    if min_cluster_size < 2:
        raise ConfigError("min_cluster_size must be >= 2")
    if min_samples < 1:
        raise ConfigError("min_samples must be >= 1")
    if n <= min_samples:
        raise DataError(f"need more than min_samples={min_samples} points, got {n}")
    if selection not in SELECTIONS:
        raise ConfigError(f"selection must be one of {SELECTIONS}")


def hdbscan(m, min_cluster_size: int = 15, min_samples: int = 10,
            selection: str = "eom") -> ClusterLabels:
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    _check_params(n, min_cluster_size, min_samples, selection)
    mst = prim_mst(mutual_reachability(m, min_samples))
    tree = condense(n, mst, min_cluster_size)
    return label_points(tree, select_clusters(tree, selection))


# --- naive reference, used as a test oracle -------------------------------

REFERENCE_MAX_N = 200


def kruskal_mst(w: np.ndarray) -> np.ndarray:
    """MST over all n(n-1)/2 edges, ordered by (weight, i, j)."""
    n = w.shape[0]
    iu, ju = np.triu_indices(n, 1)
    order = np.lexsort((ju, iu, w[iu, ju]))
    uf = _UnionFind(n)
    out = []
    for e in order:
        a, b = uf.find(int(iu[e])), uf.find(int(ju[e]))
        if a != b:
            uf.parent[b] = a
            out.append((iu[e], ju[e], w[iu[e], ju[e]]))
    return np.array(out, dtype=np.float64).reshape(-1, 3)


def _components(members: list[int], w: np.ndarray, below: float) -> list[list[int]]:
    """Connected components of ``members`` using edges strictly lighter than ``below``."""
    members = sorted(members)
    remaining = set(members)
    comps = []
    for start in members:
        if start not in remaining:
            continue
        remaining.discard(start)
        comp, frontier = [start], [start]
        while frontier:
            v = frontier.pop()
            nbrs = [u for u in list(remaining) if w[v, u] < below]
            for u in nbrs:
                remaining.discard(u)
            comp.extend(nbrs)
            frontier.extend(nbrs)
        comps.append(sorted(comp))
    return comps


def reference_hdbscan(m, min_cluster_size: int = 15, min_samples: int = 10,
                      selection: str = "eom") -> ClusterLabels:
    """Slow, direct HDBSCAN for small inputs (testing oracle).

    Builds the full mutual reachability matrix, a Kruskal MST, and the
    condensed tree by recursively splitting each cluster at the heaviest MST
    edge inside it using breadth-first search on the full matrix.
    """
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    if n > REFERENCE_MAX_N:
        raise ConfigError(f"reference implementation limited to n <= {REFERENCE_MAX_N}")
    _check_params(n, min_cluster_size, min_samples, selection)
    dist = np.array([[np.sqrt(np.sum((m[i] - m[j]) ** 2)) for j in range(n)]
                     for i in range(n)])
    core = np.array([sorted(dist[i])[min_samples] for i in range(n)])
    w = np.array([[max(core[i], core[j], dist[i, j]) for j in range(n)] for i in range(n)])
    mst = kruskal_mst(w)

    parent, birth, death, csize = [-1], [0.0], [0.0], [n]
    point_cluster = np.zeros(n, dtype=np.int64)
    point_lambda = np.zeros(n)

    def split(members, cluster):
        inside = set(members)
        if len(members) == 1:
            point_cluster[members[0]] = cluster
            point_lambda[members[0]] = _lam(0.0)
            death[cluster] = max(death[cluster], _lam(0.0))
            return
        level = max(e[2] for e in mst if int(e[0]) in inside and int(e[1]) in inside)
        lam = _lam(level)
        comps = _components(members, w, level)
        big = [c for c in comps if len(c) >= min_cluster_size]
        for c in comps:
            if len(c) < min_cluster_size:
                for pt in c:
                    point_cluster[pt] = cluster
                    point_lambda[pt] = lam
        if len(big) == 1:
            split(big[0], cluster)
            return
        death[cluster] = lam
        for c in big:
            new = len(parent)
            parent.append(cluster)
            birth.append(lam)
            death.append(0.0)
            csize.append(len(c))
            split(c, new)

    split(list(range(n)), 0)
    tree = CondensedTree(np.array(parent), np.array(birth), np.array(death),
                         np.array(csize), point_cluster, point_lambda)

    stab = tree.stability()
    kids = {c: [d for d in range(tree.n_clusters) if parent[d] == c]
            for c in range(tree.n_clusters)}

    def eom(c):
        """(selected ids, propagated stability) for the subtree at c."""
        if not kids[c]:
            return [c], stab[c]
        picked, total = [], 0.0
        for d in kids[c]:
            s, v = eom(d)
            picked += s
            total += v
        if c != 0 and not total > stab[c]:
            return [c], stab[c]
        return picked, total

    if selection == "leaf":
        chosen = [c for c in range(1, tree.n_clusters) if not kids[c]]
    else:
        chosen = [] if not kids[0] else eom(0)[0]
    return label_points(tree, chosen)


def adjusted_rand_index(a, b, exclude_noise: bool = False) -> float:
    """Adjusted Rand index from the pair-counting contingency table.

    With ``exclude_noise`` samples labelled -1 in either labeling are dropped.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DataError("labelings differ in length")
    if exclude_noise:
        keep = (a >= 0) & (b >= 0)
        a, b = a[keep], b[keep]
    n = len(a)
    if n < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def pairs(x):
        x = np.asarray(x, dtype=np.float64)
        return float(np.sum(x * (x - 1) / 2))

    index = pairs(table)
    rows = pairs(table.sum(axis=1))
    cols = pairs(table.sum(axis=0))
    total = n * (n - 1) / 2
    expected = rows * cols / total
    best = (rows + cols) / 2
    if best == expected:
        return 1.0
    return (index - expected) / (best - expected)
