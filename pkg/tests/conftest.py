import os
import sys

import numpy as np
import pytest

from shapclust.data import Dataset
from shapclust.gbt import Ensemble, RegressionTree
from shapclust.rng import RngStream

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


def random_tree(rng: np.random.Generator, p: int, depth: int) -> RegressionTree:
    """Random complete-or-ragged tree in pre-order layout; test helper only."""
    feat, thr, left, right, val = [], [], [], [], []

    def node(d):
        i = len(feat)
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        val.append(0.0)
        if d < depth and (d == 0 or rng.random() < 0.75):
            feat[i] = int(rng.integers(p))
            thr[i] = float(rng.normal())
            left[i] = node(d + 1)
            right[i] = node(d + 1)
        else:
            val[i] = float(rng.normal())
        return i

    node(0)
    return RegressionTree(np.array(feat), np.array(thr), np.array(left), np.array(right),
                          np.array(val), np.ones(len(feat)))


def random_ensemble(seed: int, p: int, k: int, rounds: int, depth: int) -> Ensemble:
    rng = np.random.default_rng(seed)
    trees = [[random_tree(rng, p, depth) for _ in range(k)] for _ in range(rounds)]
    return Ensemble(rng.normal(size=k), trees, float(rng.uniform(0.1, 1.0)), p)


def same_partition(a, b) -> bool:
    """Equal labelings up to a renaming of cluster ids; noise must match exactly."""
    a, b = np.asarray(a), np.asarray(b)
    if not np.array_equal(a < 0, b < 0):
        return False
    mapping = {}
    for x, y in zip(a[a >= 0], b[b >= 0]):
        if mapping.setdefault(int(x), int(y)) != y:
            return False
    return len(set(mapping.values())) == len(mapping)


def random_cluster_dataset(seed):
    """20 to 60 points around three centres in 1 to 4 dimensions."""
    r = RngStream(seed, 41)
    n = 20 + r.below(41)
    q = 1 + r.below(4)
    centres = r.normal(3 * q).reshape(3, q) * (2 + r.below(6))
    which = np.array([r.below(3) for _ in range(n)])
    m = centres[which] + r.normal(n * q).reshape(n, q)
    if seed % 5 == 0:
        m = np.round(m)  # many tied distances
    return m


@pytest.fixture
def blobs():
    rng = np.random.default_rng(3)
    a = rng.normal(0.0, 1.0, size=(30, 2))
    b = rng.normal(50.0, 1.0, size=(30, 2))
    # outliers sit further from every blob than the blobs sit from each other
    outliers = np.array([[-150.0, 0.0], [0.0, -150.0], [200.0, 0.0], [0.0, 200.0],
                         [200.0, 200.0]])
    return np.vstack([a, b, outliers])


@pytest.fixture
def small_dataset():
    rs = RngStream(11, 99)
    x = rs.uniform(200 * 4, -1, 1).reshape(200, 4)
    y = (x[:, 0] > 0).astype(int) + (x[:, 1] > 0.3).astype(int)
    return Dataset(x, y, class_names=("a", "b", "c"))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
