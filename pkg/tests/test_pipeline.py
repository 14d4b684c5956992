import json
import os

import numpy as np
import pytest

from shapclust import cli
from shapclust.errors import ConfigError, DataError, StageError
from shapclust.pipeline import (
    PipelineConfig,
    load_config,
    load_outputs,
    parse_config_text,
    parse_projection,
    run_pipeline,
    sha256_file,
)
from shapclust.simgen import smoke_dataset

TOY = os.path.join(os.path.dirname(__file__), "data", "toy.csv")

SMALL = {"simulate.n": 240, "shap.repeats": 1, "shap.folds": 3, "gbt.rounds": 15,
         "embed.epochs": 30}


def test_config_file_and_flag_precedence(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\ngbt.rounds = 7\nseed=3\ncluster.selection=leaf\n")
    cfg = load_config(str(path), {"gbt.rounds": 9})
    assert cfg.gbt_rounds == 9 and cfg.seed == 3 and cfg.cluster_selection == "leaf"


@pytest.mark.parametrize("text", ["gbt.depth=3", "nonsense", "gbt.rounds=abc",
                                  "cluster.selection=best", "gbt.eta=0"])
def test_config_rejections(text):
    with pytest.raises(ConfigError):
        PipelineConfig(**parse_config_text(text)).validate()


def test_preset_and_projection_parsing():
    assert load_config(preset="sim-paper").source == "simulate"
    with pytest.raises(ConfigError):
        load_config(preset="other")
    assert parse_projection("pair:0,2") == ("pair", (0, 2))
    with pytest.raises(ConfigError):
        parse_projection("pair:x")


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run"))
    cfg = load_config(overrides=dict(SMALL, seed=5, out=out))
    run_pipeline(cfg)
    return out, cfg


def test_outputs_and_manifest(small_run):
    out, _ = small_run
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    expected = {"data.csv", "beta.csv", "model.json", "metrics.txt", "shap.csv",
                "base_values.csv", "coords_raw.csv", "coords_shap.csv", "clusters.csv",
                "paths.csv", "bars.svg", "heatmap.svg", "scatter_raw.svg", "scatter_shap.svg",
                "waterfall.svg", "waterfall_classic.svg"}
    assert set(manifest["files"]) == expected
    for name, digest in manifest["files"].items():
        assert sha256_file(os.path.join(out, name)) == digest
    assert manifest["seed"] == 5 and "out" not in manifest["config"]


def test_stage_rerun_reproduces_outputs(small_run, tmp_path):
    out, cfg = small_run
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    rerun = str(tmp_path)
    data = os.path.join(out, "data.csv")
    common = ["--seed", str(cfg.seed), "--out", rerun]
    assert cli.main(["simulate", "--n", "240"] + common) == 0
    assert cli.main(["train", "--data", data, "--rounds", "15"] + common) == 0
    assert cli.main(["explain", "--data", data, "--rounds", "15", "--folds", "3",
                     "--repeats", "1"] + common) == 0
    assert cli.main(["embed", "--input", os.path.join(out, "shap.csv"), "--epochs", "30",
                     "--seed", str(cfg.seed), "--out", os.path.join(rerun, "coords_shap.csv")]) == 0
    assert cli.main(["cluster", "--input", os.path.join(out, "shap.csv"),
                     "--out", os.path.join(rerun, "clusters.csv")]) == 0
    assert cli.main(["waterfall", "--shap", os.path.join(out, "shap.csv"),
                     "--base", os.path.join(out, "base_values.csv"),
                     "--clusters", os.path.join(out, "clusters.csv"), "--out", rerun]) == 0
    for name in ("data.csv", "beta.csv", "model.json", "metrics.txt", "shap.csv",
                 "base_values.csv", "coords_shap.csv", "clusters.csv", "paths.csv",
                 "waterfall.svg"):
        assert sha256_file(os.path.join(rerun, name)) == manifest["files"][name], name


def test_report_regenerates_figures(small_run, tmp_path):
    out, _ = small_run
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert cli.main(["report", out, "--out", str(tmp_path)]) == 0
    for name in ("bars.svg", "heatmap.svg", "scatter_raw.svg", "scatter_shap.svg",
                 "metrics.txt"):
        assert sha256_file(os.path.join(tmp_path, name)) == manifest["files"][name], name


def test_load_outputs(small_run):
    out, _ = small_run
    d, t, labels, raw, shap = load_outputs(out)
    assert t.n == d.n == len(labels) == len(raw) == len(shap)


def test_toy_csv_smoke(tmp_path):
    code = cli.main(["pipeline", "--data", TOY, "--label", "status", "--out", str(tmp_path)])
    assert code == 0
    labels = np.loadtxt(tmp_path / "clusters.csv", delimiter=",", skiprows=1)[:, 1]
    assert np.all(labels == -1)
    assert os.path.isfile(tmp_path / "manifest.json")


def test_full_size_generated_csv(tmp_path):
    # 2422 x 39 table with string class names, run through the CSV path
    d = smoke_dataset()
    src = tmp_path / "cohort.csv"
    with open(src, "w", encoding="utf-8") as fh:
        fh.write(",".join(list(d.feature_names) + ["diagnosis"]) + "\n")
        for row, y in zip(d.features, d.labels):
            fh.write(",".join([repr(float(v)) for v in row] + [d.class_names[y]]) + "\n")
    out = tmp_path / "run"
    code = cli.main(["pipeline", "--data", str(src), "--label", "diagnosis", "--out", str(out),
                     "--rounds", "20", "--repeats", "1", "--folds", "3", "--epochs", "30"])
    assert code == 0
    d, tensor, labels, _, _ = load_outputs(str(out))
    assert tensor.values.shape == (2422, 39, 3)
    assert sorted(tensor.class_names) == ["AD", "CN", "MCI"]
    assert len(labels) == 2422
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["data.label"] == "diagnosis"


def test_identical_runs_identical_manifest(tmp_path):
    args = ["pipeline", "--simulate", "--seed", "7", "--n", "150", "--repeats", "1",
            "--rounds", "10", "--epochs", "20"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    a = open(tmp_path / "a" / "manifest.json", "rb").read()
    b = open(tmp_path / "b" / "manifest.json", "rb").read()
    assert a == b


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["pipeline", "--data", str(tmp_path / "none.csv"),
                     "--out", str(tmp_path)]) == 3
    assert "[ingest]" in capsys.readouterr().err
    assert cli.main(["pipeline", "--bogus"]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("gbt.unknown=1\n")
    assert cli.main(["pipeline", "--config", str(bad)]) == 2
    assert cli.main(["cluster", "--input", TOY, "--out", str(tmp_path / "c.csv")]) == 3
    flat = tmp_path / "flat.csv"
    flat.write_text("a,b\n" + "1,1\n" * 20)
    assert cli.main(["embed", str(flat), "--method", "pca", "--out", str(tmp_path)]) == 4


def test_stage_error_wraps_cause():
    err = StageError("train", DataError("boom"))
    assert str(err) == "[train] boom" and err.exit_code == 3
