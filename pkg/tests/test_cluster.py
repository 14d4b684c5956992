import numpy as np
import pytest
from scipy.spatial.distance import cdist

from shapclust.cluster import (
    adjusted_rand_index,
    hdbscan,
    kruskal_mst,
    mutual_reachability,
    prim_mst,
    reference_hdbscan,
)
from shapclust.errors import ConfigError, DataError
from shapclust.rng import RngStream

from conftest import random_cluster_dataset as _random_dataset, same_partition


def test_blobs_with_outliers(blobs):
    res = hdbscan(blobs, min_cluster_size=5, min_samples=3)
    assert res.n_clusters == 2
    assert np.all(res.labels[:60] >= 0)
    assert len(set(res.labels[:30])) == 1 and len(set(res.labels[30:60])) == 1
    assert np.all(res.labels[60:] == -1)
    ref = reference_hdbscan(blobs, 5, 3)
    assert same_partition(res.labels, ref.labels)


def test_too_few_points_are_noise():
    m = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert np.all(hdbscan(m, min_cluster_size=5, min_samples=2).labels == -1)


def test_equilateral_triple():
    m = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    mr = mutual_reachability(m, 1)
    off = mr[~np.eye(3, dtype=bool)]
    assert np.allclose(off, 1.0, atol=1e-15)
    for mcs in (2, 3):
        labels = hdbscan(m, min_cluster_size=mcs, min_samples=1).labels
        assert len(set(labels.tolist())) == 1


@pytest.mark.parametrize("seed", range(50))
def test_matches_reference(seed):
    m = _random_dataset(seed)
    for selection in ("eom", "leaf"):
        fast = hdbscan(m, 5, 3, selection)
        ref = reference_hdbscan(m, 5, 3, selection)
        assert same_partition(fast.labels, ref.labels)


def test_reference_size_limit():
    with pytest.raises(ConfigError):
        reference_hdbscan(np.zeros((201, 2)), 5, 3)


def test_duplicates_collapse():
    m = np.vstack([np.zeros((20, 2)), np.full((20, 2), 10.0), [[5.0, 40.0]]])
    res = hdbscan(m, min_cluster_size=15, min_samples=5)
    assert res.n_clusters == 2
    assert len(set(res.labels[:20])) == 1 and res.labels[0] >= 0
    assert same_partition(res.labels, reference_hdbscan(m, 15, 5).labels)


def test_row_shuffle_permutes_labels():
    m = _random_dataset(7)
    perm = RngStream(7).permutation(len(m))
    a = hdbscan(m, 5, 3).labels
    b = hdbscan(m[perm], 5, 3).labels
    assert same_partition(a[perm], b)


def test_mutual_reachability_dominates_distance():
    m = _random_dataset(3)
    assert np.all(mutual_reachability(m, 4) >= cdist(m, m))


def test_core_distance_excludes_self():
    m = np.array([[0.0], [1.0], [3.0], [7.0]])
    mr = mutual_reachability(m, 1)
    # nearest other point: 1, 1, 2, 4
    assert mr[0, 1] == 1.0 and mr[2, 3] == 4.0 and mr[1, 2] == 2.0


@pytest.mark.parametrize("seed", range(10))
def test_mst_weight_matches_exhaustive(seed):
    w = mutual_reachability(_random_dataset(seed), 3)
    assert abs(prim_mst(w)[:, 2].sum() - kruskal_mst(w)[:, 2].sum()) <= 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_leaf_never_fewer_than_eom(seed):
    m = _random_dataset(seed)
    assert hdbscan(m, 4, 2, "leaf").n_clusters >= hdbscan(m, 4, 2, "eom").n_clusters


def test_label_contract(blobs):
    res = hdbscan(blobs, 5, 3)
    ids = sorted(set(res.labels.tolist()) - {-1})
    assert ids == list(range(res.n_clusters))
    sizes = [int(np.sum(res.labels == c)) for c in ids]
    assert sizes == sorted(sizes, reverse=True)
    assert min(sizes) >= 5
    assert np.all(res.persistence >= 0)


def test_condensed_tree_consistency():
    res = hdbscan(_random_dataset(11), 4, 2)
    t = res.tree
    assert t.parent[0] == -1 and np.sum(t.parent == -1) == 1
    for c in range(1, t.n_clusters):
        assert t.birth[c] >= t.birth[t.parent[c]] >= 0
    for c in range(t.n_clusters):
        assert sum(t.size[k] for k in t.children(c)) <= t.size[c]


def test_deterministic():
    m = _random_dataset(4)
    a, b = hdbscan(m, 5, 3), hdbscan(m, 5, 3)
    assert np.array_equal(a.labels, b.labels)
    assert a.persistence.tobytes() == b.persistence.tobytes()


@pytest.mark.parametrize("kwargs, error", [
    (dict(min_cluster_size=1), ConfigError),
    (dict(selection="best"), ConfigError),
    (dict(min_samples=70), DataError),
])
def test_errors(kwargs, error):
    with pytest.raises(error):
        hdbscan(_random_dataset(1)[:60], **kwargs)


def test_ari_identical_and_hand_table():
    a = [0, 0, 1, 1, 2]
    assert adjusted_rand_index(a, a) == 1.0
    # contingency (2,1;1,2): index 2, row/col pair sums 6, total 15
    x = [0, 0, 0, 1, 1, 1]
    y = [0, 0, 1, 0, 1, 1]
    expected = (2 - 6 * 6 / 15) / (6 - 6 * 6 / 15)
    assert adjusted_rand_index(x, y) == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(-1 / 9)


def test_ari_null():
    r = RngStream(8)
    b = np.array([r.below(4) for _ in range(400)])
    assert abs(adjusted_rand_index(np.zeros(400, dtype=int), b)) <= 0.05
    c = np.array([r.below(4) for _ in range(400)])
    assert abs(adjusted_rand_index(c, b)) <= 0.05


def test_ari_noise_flag_and_errors():
    a = np.array([0, 0, 1, 1, -1, -1])
    b = np.array([0, 0, 1, 1, 0, 1])
    assert adjusted_rand_index(a, b, exclude_noise=True) == 1.0
    assert adjusted_rand_index(a, b) < 1.0
    with pytest.raises(DataError):
        adjusted_rand_index([0, 1], [0])


def test_ari_agrees_with_scikit_learn():
    metrics = pytest.importorskip("sklearn.metrics")
    r = RngStream(9)
    for _ in range(10):
        a = np.array([r.below(5) for _ in range(100)])
        b = np.where(r.uniform(100) < 0.7, a, np.array([r.below(5) for _ in range(100)]))
        assert adjusted_rand_index(a, b) == pytest.approx(metrics.adjusted_rand_score(a, b),
                                                          abs=1e-12)
