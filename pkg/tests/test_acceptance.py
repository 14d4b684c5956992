"""Acceptance suite for the three-class simulation preset.

Each test checks one numbered criterion and records a PASS/FAIL line that the
terminal summary prints (see ``conftest.py``).  ``python tests/test_acceptance.py``
runs just this suite.

The preset run is executed twice through the command-line entry point; the
second run only serves the determinism check.
"""

import os
import sys

import numpy as np
import pytest

from shapclust import pipeline as pl
from shapclust.cli import main as cli_main
from shapclust.cluster import adjusted_rand_index, hdbscan, reference_hdbscan
from shapclust.embed import principal_axes
from shapclust.gbt import Ensemble, log_loss, softmax_grad_hess
from shapclust.rng import RngStream
from shapclust.shap import brute_force_shapley, feature_importance, shap_batch
from shapclust.simgen import quadrant_labels
from shapclust.waterfall import cluster_mean_paths, project_pairwise, project_pca

from conftest import random_cluster_dataset, random_ensemble, same_partition

PRESET = "sim-paper"
TABLE_F1 = (0.92, 0.91, 0.88)

RESULTS: dict = {}


def record(number: int, title: str, ok: bool, detail: str) -> None:
    RESULTS[number] = (title, bool(ok), detail)
    assert ok, f"criterion {number} ({title}): {detail}"


def summary_lines() -> list[str]:
    return [f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
            for n, (title, ok, detail) in sorted(RESULTS.items())]


class PresetRun:
    def __init__(self, root):
        self.out = os.path.join(root, "run1")
        self.out_again = os.path.join(root, "run2")
        for out in (self.out, self.out_again):
            code = cli_main(["pipeline", "--preset", PRESET, "--out", out])
            assert code == 0
        self.cfg = pl.recorded_config(self.out)
        self.data, self.tensor, self.labels, _, _ = pl.load_outputs(self.out)
        self.model = Ensemble.load(os.path.join(self.out, "model.json"))
        # the in-memory tensor carries per-run additivity and the out-of-fold margins
        scratch = os.path.join(root, "explain")
        os.makedirs(scratch)
        self.full_tensor = pl.stage_explain(
            self.data, self.cfg.gbt_config(), self.cfg.shap_folds, self.cfg.shap_repeats,
            self.cfg.shap_background, self.cfg.seed, scratch)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    return PresetRun(str(tmp_path_factory.mktemp("preset")))


def test_criterion_01_held_out_metrics(run):
    report = pl.held_out_report(run.data, run.model, run.cfg.seed, run.cfg.test_fraction)
    with open(os.path.join(run.out, "metrics.txt"), encoding="utf-8") as fh:
        assert fh.read() == report.format()
    f1_ok = all(abs(f - t) <= 0.05 for f, t in zip(report.f1, TABLE_F1))
    support = [int(s) for s in report.support]
    ok = (abs(report.accuracy - 0.90) <= 0.04 and f1_ok and sum(support) == 450
          and all(110 <= s <= 180 for s in support))
    record(1, "held-out metrics", ok,
           f"n={run.data.n}, accuracy {report.accuracy:.3f}, "
           f"F1 {tuple(round(float(f), 3) for f in report.f1)}, support {support}")


def test_criterion_02_shap_oracle():
    worst = 0.0
    for seed in range(20):
        r = RngStream(seed, 902)
        p = 1 + r.below(8)
        k = 1 if seed % 2 else 3
        e = random_ensemble(seed, p, k, 1 + r.below(10), 1 + r.below(3))
        bg = r.normal((1 + r.below(32)) * p).reshape(-1, p)
        xs = r.normal(4 * p).reshape(4, p)
        phi = shap_batch(e, xs, bg)
        for i, x in enumerate(xs):
            ref = brute_force_shapley(e.predict_margins, x, bg, batched=True)
            worst = max(worst, float(np.max(np.abs(phi[i] - ref))))
    record(2, "SHAP oracle equivalence", worst <= 1e-9,
           f"max deviation {worst:.2e} over 20 ensembles")


def test_criterion_03_additivity(run):
    t = run.full_tensor
    saved = run.tensor
    assert np.array_equal(t.values, saved.values)
    per_run = max(t.run_additivity)
    e = random_ensemble(3, 5, 3, 8, 3)
    # a sixth column that no tree can reach
    e6 = Ensemble(e.base_score, e.trees, e.eta, 6)
    r = RngStream(3, 903)
    phi = shap_batch(e6, r.normal(10 * 6).reshape(10, 6), r.normal(16 * 6).reshape(16, 6))
    dummy_zero = bool(np.all(phi[:, 5, :] == 0.0))
    record(3, "additivity", per_run <= 1e-6 and dummy_zero,
           f"{len(t.run_additivity)} runs, worst |sum phi - (f - base)| {per_run:.2e}; "
           f"dummy feature exactly zero: {dummy_zero}")


def test_criterion_04_importance_ranking(run):
    imp = feature_importance(run.tensor)
    top = [int(i) for i in np.argsort(-imp, kind="stable")[:3]]
    record(4, "feature importance", set(top[:2]) == {0, 1},
           f"top features {top} with mean |SHAP| {[round(float(imp[i]), 3) for i in top]}")


def test_criterion_05_quadrant_recovery(run):
    truth = quadrant_labels(run.data.features)
    ari = adjusted_rand_index(run.labels, truth, exclude_noise=True)
    noise = float(np.mean(run.labels < 0))
    n_clusters = len(set(run.labels[run.labels >= 0].tolist()))
    record(5, "quadrant recovery", ari >= 0.7 and noise <= 0.15,
           f"{n_clusters} clusters, ARI excluding noise {ari:.3f}, noise fraction {noise:.3f}")


def _majority(values):
    vals, counts = np.unique(values, return_counts=True)
    return int(vals[np.argmax(counts)])


def test_criterion_06_distinct_pathways(run):
    quadrant = quadrant_labels(run.data.features)
    predicted = np.argmax(run.full_tensor.oof_margins, axis=1)
    ids = sorted(int(c) for c in np.unique(run.labels) if c >= 0)
    # largest cluster dominated by each mixed-sign quadrant (2: x0>0>x1, 3: x1>0>x0)
    chosen = {}
    for c in ids:
        members = run.labels == c
        q = _majority(quadrant[members])
        if q in (2, 3) and members.sum() > chosen.get(q, (None, 0))[1]:
            chosen[q] = (c, int(members.sum()))
    if len(chosen) < 2:
        record(6, "distinct pathways", False, f"mixed-sign quadrant clusters found: {chosen}")
    a, b = chosen[2][0], chosen[3][0]
    cls_a = _majority(predicted[run.labels == a])
    cls_b = _majority(predicted[run.labels == b])
    mean_a = run.tensor.values[run.labels == a].mean(axis=0)
    mean_b = run.tensor.values[run.labels == b].mean(axis=0)
    flips = {f: [c for c in range(run.tensor.k) if mean_a[f, c] * mean_b[f, c] < 0]
             for f in (0, 1)}
    ok = cls_a == cls_b == 2 and all(flips.values())
    record(6, "distinct pathways", ok,
           f"clusters {a} and {b} predict classes {cls_a} and {cls_b}; "
           f"sign differs for Feature 0 in classes {flips[0]}, Feature 1 in classes {flips[1]}")


def test_criterion_07_waterfall_identities(run):
    t = run.tensor
    paths = cluster_mean_paths(t, run.labels, run.cfg.waterfall_top_m)
    endpoint_err = 0.0
    for path in paths:
        target = t.base_values + t.values[run.labels == path.tag].mean(axis=0).sum(axis=0)
        endpoint_err = max(endpoint_err, float(np.max(np.abs(path.endpoint - target))))
    pairwise_exact = all(
        np.array_equal(project_pairwise(p, a, b).vertices2d, p.vertices[:, [a, b]])
        for p in paths for a in range(t.k) for b in range(t.k) if a != b)
    anchors_at_origin = all(np.all(q.vertices2d[0] == 0.0) for q in project_pca(paths))
    ok = endpoint_err <= 1e-9 and pairwise_exact and anchors_at_origin
    record(7, "waterfall identities", ok,
           f"{len(paths)} paths, endpoint error {endpoint_err:.2e}, pairwise bit-exact "
           f"{pairwise_exact}, PCA anchor at origin {anchors_at_origin}")


def test_criterion_08_clustering_oracle():
    mismatched = []
    for seed in range(50):
        m = random_cluster_dataset(seed)
        assert len(m) <= 60
        for selection in ("eom", "leaf"):
            fast = hdbscan(m, 5, 3, selection)
            ref = reference_hdbscan(m, 5, 3, selection)
            if not same_partition(fast.labels, ref.labels):
                mismatched.append((seed, selection))
    record(8, "clustering oracle", not mismatched,
           f"50 datasets x 2 selection modes, mismatches {mismatched}")


def test_criterion_09_finer_clustering(run):
    flat = run.tensor.flatten()
    cfg = run.cfg
    coarse = hdbscan(flat, cfg.cluster_min_cluster_size, cfg.cluster_min_samples, "eom").labels
    fine = hdbscan(flat, cfg.cluster_min_cluster_size, cfg.cluster_min_samples, "leaf").labels
    assert np.array_equal(coarse, run.labels)
    x = run.data.features
    splits = []
    for c in sorted(set(coarse[coarse >= 0].tolist())):
        subs = sorted(set(fine[(coarse == c) & (fine >= 0)].tolist()))
        for i, s in enumerate(subs):
            for u in subs[i + 1:]:
                diff = np.abs(x[fine == s].mean(axis=0) - x[fine == u].mean(axis=0))
                splits.append((c, int(np.argmax(diff))))
    outside = [s for s in splits if s[1] not in (0, 1)]
    n_fine = len(set(fine[fine >= 0].tolist()))
    n_coarse = len(set(coarse[coarse >= 0].tolist()))
    record(9, "finer clustering", bool(outside),
           f"eom {n_coarse} clusters, leaf {n_fine} clusters; "
           f"(coarse cluster, most different feature) per split: {splits or 'no split'}")


def test_criterion_10_determinism(run):
    with open(os.path.join(run.out, pl.MANIFEST_NAME), "rb") as fh:
        first = fh.read()
    with open(os.path.join(run.out_again, pl.MANIFEST_NAME), "rb") as fh:
        second = fh.read()
    record(10, "determinism", first == second,
           f"manifests of two preset runs identical: {first == second}")


def test_criterion_11_numerical_checks(run):
    r = RngStream(11, 911)
    fd_err = 0.0
    step = 1e-4
    for trial in range(10):
        k = 2 + trial % 3
        m = r.normal(4 * k).reshape(4, k) * 3
        y = np.array([r.below(k) for _ in range(4)])
        g, h = softmax_grad_hess(m, y, k)
        for i in range(4):
            for c in range(k):
                def loss(v):
                    mm = m[i:i + 1].copy()
                    mm[0, c] = v
                    return log_loss(mm, y[i:i + 1])
                v = m[i, c]
                fd_g = (loss(v + step) - loss(v - step)) / (2 * step)
                fd_h = (loss(v + step) - 2 * loss(v) + loss(v - step)) / step ** 2
                fd_err = max(fd_err, abs(fd_g - g[i, c]), abs(fd_h - h[i, c]))
    loadings, _ = principal_axes(run.tensor.flatten(), 2)
    ortho_err = float(np.max(np.abs(loadings.T @ loadings - np.eye(2))))
    prob = run.model.predict_proba(run.data.features)
    prob_err = float(np.max(np.abs(prob.sum(axis=1) - 1.0)))
    ok = fd_err <= 1e-6 and ortho_err <= 1e-8 and prob_err <= 1e-12
    record(11, "numerical checks", ok,
           f"finite differences {fd_err:.1e}, PCA orthonormality {ortho_err:.1e}, "
           f"probability sums {prob_err:.1e}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
