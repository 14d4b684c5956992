"""End-to-end supervised clustering run with a hashed output manifest.

Stages run in order: data (simulate or ingest), train (+ held-out metrics),
explain (out-of-fold SHAP), embed (raw and SHAP), cluster, waterfall, render.
Each stage draws randomness from its own fixed stream of the master seed, and
each stage function is also what the matching CLI subcommand calls, so a stage
can be re-run on its own from the files a pipeline run left behind.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import svg
from .cluster import ClusterLabels, hdbscan
from .data import (
    Dataset,
    load_csv,
    minmax_scale,
    read_matrix_csv,
    train_test_split,
    write_csv,
    write_matrix_csv,
)
from .embed import Embedding2D, neighbor_embed, pca_embed
from .errors import ConfigError, DataError, ShapClustError, StageError
from .gbt import Ensemble, GbtConfig, classification_report, fit
from .rng import (
    STREAM_EMBED,
    STREAM_FOLDS,
    STREAM_SPLIT,
    RngStream,
)
from .shap import ShapTensor, cv_shap, mean_abs_shap
from .simgen import beta_table, simulate
from .waterfall import (
    build_path,
    classic_waterfall,
    cluster_mean_paths,
    heatmap_data,
    paths_table,
    project_pairwise,
    project_pca,
)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
PRESET_SEEDS = {"sim-paper": 1}


@dataclass
class PipelineConfig:
    """Every pipeline parameter, addressable as ``section.key`` in config files."""

    source: str = "simulate"  # "simulate" or a CSV path
    label: str = "label"
    scale: bool = False
    n: int = 1500
    test_fraction: float = 0.3
    seed: int = 0
    threads: int = 1
    out: str = "out"
    gbt_rounds: int = 100
    gbt_eta: float = 0.3
    gbt_max_depth: int = 4
    gbt_lambda: float = 1.0
    gbt_gamma: float = 0.0
    gbt_min_child_weight: float = 1.0
    shap_folds: int = 5
    shap_repeats: int = 5
    shap_background: int = 256
    embed_method: str = "neighbor"
    embed_neighbors: int = 15
    embed_min_dist: float = 0.1
    embed_epochs: int = 200
    cluster_min_cluster_size: int = 15
    cluster_min_samples: int = 10
    cluster_selection: str = "eom"
    cluster_on: str = "shap"
    waterfall_top_m: int = 8
    waterfall_projection: str = "pca"

    def gbt_config(self) -> GbtConfig:
        return GbtConfig(self.gbt_rounds, self.gbt_eta, self.gbt_max_depth, self.gbt_lambda,
                         self.gbt_gamma, self.gbt_min_child_weight)

    def validate(self) -> "PipelineConfig":
        self.gbt_config()
        if self.embed_method not in ("pca", "neighbor"):
            raise ConfigError("embed.method must be pca or neighbor")
        if self.cluster_selection not in ("eom", "leaf"):
            raise ConfigError("cluster.selection must be eom or leaf")
        if self.cluster_on not in ("shap", "embedding"):
            raise ConfigError("cluster.on must be shap or embedding")
        parse_projection(self.waterfall_projection)
        if self.shap_folds < 2 or self.shap_repeats < 1 or self.shap_background < 1:
            raise ConfigError("shap.folds >= 2, shap.repeats >= 1, shap.background >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        return self

    def recorded(self) -> dict:
        """Config as stored in the manifest (output location left out)."""
        d = dataclasses.asdict(self)
        d.pop("out")
        d.pop("threads")
        return {config_key(k): v for k, v in d.items()}


_SECTIONS = ("gbt", "shap", "embed", "cluster", "waterfall")
_TOP_LEVEL_ALIASES = {"data.source": "source", "data.label": "label", "data.scale": "scale",
                      "simulate.n": "n", "split.test_fraction": "test_fraction"}


def config_key(attr: str) -> str:
    """Dotted config-file key for a :class:`PipelineConfig` attribute."""
    for alias, name in _TOP_LEVEL_ALIASES.items():
        if name == attr:
            return alias
    for sec in _SECTIONS:
        if attr.startswith(sec + "_"):
            return f"{sec}.{attr[len(sec) + 1:]}"
    return attr


def _attr_for(key: str) -> str:
    key = key.strip()
    if key in _TOP_LEVEL_ALIASES:
        return _TOP_LEVEL_ALIASES[key]
    if "." in key:
        sec, name = key.split(".", 1)
        return f"{sec}_{name}"
    return key


def _coerce(attr: str, value):
    fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    if attr not in fields:
        raise ConfigError(f"unknown config key {config_key(attr)!r}")
    kind = type(fields[attr].default)
    if not isinstance(value, str):
        return kind(value)
    text = value.strip()
    try:
        if kind is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {config_key(attr)}") from None


def parse_config_text(text: str) -> dict:
    """Flat ``section.key=value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        attr = _attr_for(key)
        values[attr] = _coerce(attr, value)
    return values


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None,
                preset: Optional[str] = None) -> PipelineConfig:
    """Build a config from defaults, then a preset, then a file, then flag overrides."""
    values: dict = {}
    if preset is not None:
        if preset not in PRESET_SEEDS:
            raise ConfigError(f"unknown preset {preset!r}")
        values.update(source="simulate", n=1500, seed=PRESET_SEEDS[preset])
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    for k, v in (overrides or {}).items():
        if v is not None:
            attr = _attr_for(k)
            values[attr] = _coerce(attr, v)
    return PipelineConfig(**values).validate()


def parse_projection(spec: str):
    """``"pca"`` or ``"pair:A,B"`` -> ``("pca", None)`` / ``("pair", (A, B))``."""
    if spec == "pca":
        return "pca", None
    if spec.startswith("pair:"):
        try:
            a, b = (int(v) for v in spec[5:].split(","))
        except ValueError:
            raise ConfigError(f"bad projection {spec!r}; use pair:A,B") from None
        return "pair", (a, b)
    raise ConfigError(f"bad projection {spec!r}; use pca or pair:A,B")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def set_threads(threads: int) -> None:
    import numba

    numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))


# --- stages ---------------------------------------------------------------


def stage_simulate(n: int, seed: int, out: str) -> Dataset:
    sim = simulate(n, seed)
    write_csv(sim.data, os.path.join(out, "data.csv"))
    with open(os.path.join(out, "beta.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "beta1", "beta2"])
        for name, b1, b2 in beta_table(sim.model):
            w.writerow([name, repr(b1), repr(b2)])
    return sim.data


def constant_model(train: Dataset) -> Ensemble:
    """Zero-round model predicting the clamped log class priors."""
    prior = np.bincount(train.labels, minlength=train.k) / max(train.n, 1)
    return Ensemble(np.log(np.maximum(prior, 1e-12)), [], 0.3, train.p,
                    train.feature_names, train.class_names)


def _fit_or_constant(train: Dataset, cfg: GbtConfig, tolerate: bool) -> Ensemble:
    try:
        return fit(train, cfg)
    except DataError:
        if not tolerate:
            raise
        log.warning("training subset has %d rows / one class; using a constant model",
                    train.n)
        return constant_model(train)


def split_indices(n: int, seed: int, test_fraction: float):
    return train_test_split(n, test_fraction, RngStream(seed, STREAM_SPLIT))


def held_out_report(d: Dataset, model: Ensemble, seed: int, test_fraction: float):
    _, test_idx = split_indices(d.n, seed, test_fraction)
    test = d.subset(test_idx)
    return classification_report(test.labels, model.predict_class(test.features), d.k,
                                 d.class_names)


def stage_train(d: Dataset, cfg: GbtConfig, seed: int, test_fraction: float, out: str,
                tolerate_degenerate: bool = False, model_path: Optional[str] = None):
    train_idx, _ = split_indices(d.n, seed, test_fraction)
    model = _fit_or_constant(d.subset(train_idx), cfg, tolerate_degenerate)
    model.save(model_path or os.path.join(out, "model.json"))
    report = held_out_report(d, model, seed, test_fraction)
    with open(os.path.join(out, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.format())
    return model, report


def stage_explain(d: Dataset, cfg: GbtConfig, folds: int, repeats: int, background: int,
                  seed: int, out: str, tolerate_degenerate: bool = False) -> ShapTensor:
    if tolerate_degenerate and folds > d.n:
        log.warning("only %d rows; using %d folds", d.n, d.n)
        folds = d.n
    fitter = (lambda train, c: _fit_or_constant(train, c, True)) if tolerate_degenerate else None
    tensor = cv_shap(d, cfg, folds, repeats, RngStream(seed, STREAM_FOLDS), background,
                     fitter=fitter)
    tensor.save(os.path.join(out, "shap.csv"), os.path.join(out, "base_values.csv"))
    return tensor


def embed_matrix(m: np.ndarray, method: str, neighbors: int, min_dist: float, epochs: int,
                 seed: int, tolerate_degenerate: bool = False) -> Embedding2D:
    m = np.asarray(m, dtype=np.float64)
    if method == "pca":
        return pca_embed(m)
    if tolerate_degenerate and neighbors >= m.shape[0]:
        neighbors = m.shape[0] - 1
        log.warning("only %d rows; using %d neighbours", m.shape[0], neighbors)
    return neighbor_embed(m, neighbors, min_dist, epochs, RngStream(seed, STREAM_EMBED))


def write_coords(path, e: Embedding2D) -> None:
    write_matrix_csv(path, e.coords, ["x", "y"], index=range(len(e.coords)))


def stage_cluster(m: np.ndarray, min_cluster_size: int, min_samples: int, selection: str,
                  out_path: str, tolerate_degenerate: bool = False) -> ClusterLabels:
    m = np.asarray(m, dtype=np.float64)
    if tolerate_degenerate and m.shape[0] <= min_samples:
        log.warning("only %d rows; every sample labelled noise", m.shape[0])
        labels = ClusterLabels(np.full(m.shape[0], -1, dtype=np.int64), np.zeros(0))
    else:
        labels = hdbscan(m, min_cluster_size, min_samples, selection)
    write_clusters(out_path, labels.labels)
    return labels


def write_clusters(path, labels) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "cluster"])
        for i, c in enumerate(labels):
            w.writerow([i, int(c)])


def read_clusters(path) -> np.ndarray:
    m, names, index = read_matrix_csv(path)
    if names != ["cluster"]:
        raise DataError(f"{path}: expected columns sample,cluster")
    return m[:, 0].astype(np.int64)


def summary_paths(tensor: ShapTensor, labels: np.ndarray, top_m: int):
    """Cluster-mean paths, or the overall mean path when everything is noise."""
    if np.any(labels >= 0):
        return cluster_mean_paths(tensor, labels, top_m)
    return [build_path(tensor.values.mean(axis=0), tensor.base_values, top_m,
                       tensor.feature_names, tag="all", class_names=tensor.class_names)]


def project_paths(paths, projection: str):
    kind, pair = parse_projection(projection)
    if kind == "pair":
        return [project_pairwise(p, *pair) for p in paths]
    if paths[0].k < 2 or not any(np.any(p.vertices != p.anchor) for p in paths):
        log.warning("PCA projection undefined for these paths; using the first two classes")
        k = paths[0].k
        return [project_pairwise(p, 0, min(1, k - 1)) if k > 1 else p for p in paths]
    return project_pca(paths)


def stage_waterfall(tensor: ShapTensor, labels: np.ndarray, projection: str, top_m: int,
                    out: str):
    paths = summary_paths(tensor, labels, top_m)
    header, rows = paths_table(paths)
    with open(os.path.join(out, "paths.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])
    projected = project_paths(paths, projection)
    svg.render_svg(svg.PathPlot(projected, "Generalized waterfall paths by cluster",
                                tensor.class_names), os.path.join(out, "waterfall.svg"))
    return paths, projected


def stage_report(d: Dataset, tensor: ShapTensor, labels: np.ndarray, coords_raw: np.ndarray,
                 coords_shap: np.ndarray, out: str) -> list[str]:
    written = []

    def put(name, artifact):
        written.append(svg.render_svg(artifact, os.path.join(out, name)))

    groups = {int(c): f"Cluster {c}" for c in np.unique(labels) if c >= 0}
    class_groups = {c: name for c, name in enumerate(d.class_names)}
    put("scatter_raw.svg", svg.ScatterPlot(coords_raw, d.labels, class_groups,
                                           "Raw data, coloured by class", "dim 1", "dim 2"))
    put("scatter_shap.svg", svg.ScatterPlot(coords_shap, labels, groups,
                                            "SHAP values, coloured by cluster", "dim 1",
                                            "dim 2"))
    put("bars.svg", svg.BarChart(mean_abs_shap(tensor), tensor.feature_names,
                                 tensor.class_names, "Average absolute SHAP values by class"))
    if np.any(labels >= 0):
        rows, ids = heatmap_data(d, labels)
        row_names = [f"Cluster {c}" for c in ids]
    else:
        rows, row_names = d.features.mean(axis=0, keepdims=True), ["all samples"]
    put("heatmap.svg", svg.Heatmap(rows, row_names, d.feature_names,
                                   "Raw data averaged across clusters"))
    # classic one-dimensional waterfall for sample 0 on its top reconstructed class
    recon = tensor.reconstructed()[0]
    c = int(np.argmax(recon))
    path = classic_waterfall(tensor.values[0, :, c], tensor.base_values[c], 8,
                             tensor.feature_names)
    put("waterfall_classic.svg", svg.ClassicWaterfall(
        float(path.anchor[0]), [float(s.delta[0]) for s in path.segments],
        [s.feature for s in path.segments],
        f"Sample 0, {tensor.class_names[c]} margin"))
    return written


# --- orchestration --------------------------------------------------------


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except ShapClustError as exc:
        raise StageError(name, exc) from exc
    except (ValueError, ArithmeticError, OSError) as exc:
        raise StageError(name, exc) from exc


def run_pipeline(cfg: PipelineConfig) -> str:
    """Run every stage into ``cfg.out`` and write ``manifest.json``; returns the directory."""
    cfg.validate()
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    set_threads(cfg.threads)
    gcfg = cfg.gbt_config()
    stages = []

    if cfg.source == "simulate":
        d = _stage("simulate", stage_simulate, cfg.n, cfg.seed, out)
        stages.append({"stage": "simulate", "outputs": ["data.csv", "beta.csv"]})
    else:
        def ingest():
            data = load_csv(cfg.source, cfg.label)
            if data.labels is None:
                raise DataError("pipeline needs a label column")
            return minmax_scale(data) if cfg.scale else data

        d = _stage("ingest", ingest)
    small = cfg.source != "simulate"

    model, report = _stage("train", stage_train, d, gcfg, cfg.seed, cfg.test_fraction, out,
                           tolerate_degenerate=small)
    stages.append({"stage": "train", "outputs": ["model.json", "metrics.txt"]})
    tensor = _stage("explain", stage_explain, d, gcfg, cfg.shap_folds, cfg.shap_repeats,
                    cfg.shap_background, cfg.seed, out, tolerate_degenerate=small)
    stages.append({"stage": "explain", "outputs": ["shap.csv", "base_values.csv"]})

    def embed_both():
        er = embed_matrix(d.features, cfg.embed_method, cfg.embed_neighbors,
                          cfg.embed_min_dist, cfg.embed_epochs, cfg.seed, small)
        es = embed_matrix(tensor.flatten(), cfg.embed_method, cfg.embed_neighbors,
                          cfg.embed_min_dist, cfg.embed_epochs, cfg.seed, small)
        write_coords(os.path.join(out, "coords_raw.csv"), er)
        write_coords(os.path.join(out, "coords_shap.csv"), es)
        return er, es

    emb_raw, emb_shap = _stage("embed", embed_both)
    stages.append({"stage": "embed", "outputs": ["coords_raw.csv", "coords_shap.csv"]})

    space = tensor.flatten() if cfg.cluster_on == "shap" else emb_shap.coords
    labels = _stage("cluster", stage_cluster, space, cfg.cluster_min_cluster_size,
                    cfg.cluster_min_samples, cfg.cluster_selection,
                    os.path.join(out, "clusters.csv"), small)
    stages.append({"stage": "cluster", "outputs": ["clusters.csv"]})

    _stage("waterfall", stage_waterfall, tensor, labels.labels, cfg.waterfall_projection,
           cfg.waterfall_top_m, out)
    stages.append({"stage": "waterfall", "outputs": ["paths.csv", "waterfall.svg"]})
    written = _stage("report", stage_report, d, tensor, labels.labels, emb_raw.coords,
                     emb_shap.coords, out)
    stages.append({"stage": "report", "outputs": sorted(os.path.basename(p) for p in written)})

    write_manifest(out, cfg, stages)
    return out


def write_manifest(out: str, cfg: PipelineConfig, stages: list) -> dict:
    files = sorted(f for s in stages for f in s["outputs"])
    manifest = {
        "format": "shapclust-manifest/1",
        "seed": cfg.seed,
        "config": cfg.recorded(),
        "stages": stages,
        "files": {f: sha256_file(os.path.join(out, f)) for f in files},
    }
    with open(os.path.join(out, MANIFEST_NAME), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def recorded_config(out: str) -> PipelineConfig:
    """Config stored in a run's manifest (defaults when there is no manifest)."""
    manifest = os.path.join(out, MANIFEST_NAME)
    if not os.path.isfile(manifest):
        return PipelineConfig(out=out)
    with open(manifest, encoding="utf-8") as fh:
        recorded = json.load(fh)["config"]
    return PipelineConfig(out=out, **{_attr_for(k): v for k, v in recorded.items()})


def _recorded_dataset(out: str) -> Dataset:
    """Input data of a run: the manifest's CSV source, else ``data.csv`` in ``out``."""
    cfg = recorded_config(out)
    if cfg.source == "simulate":
        return load_csv(os.path.join(out, "data.csv"), "label")
    d = load_csv(cfg.source, cfg.label)
    return minmax_scale(d) if cfg.scale else d


def load_outputs(out: str):
    """Read back a pipeline directory: (data, tensor, labels, coords_raw, coords_shap)."""
    d = _recorded_dataset(out)
    tensor = ShapTensor.load(os.path.join(out, "shap.csv"), os.path.join(out, "base_values.csv"))
    labels = read_clusters(os.path.join(out, "clusters.csv"))
    coords_raw = read_matrix_csv(os.path.join(out, "coords_raw.csv"))[0]
    coords_shap = read_matrix_csv(os.path.join(out, "coords_shap.csv"))[0]
    return d, tensor, labels, coords_raw, coords_shap
