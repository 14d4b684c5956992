"""Command-line entry point: ``shapclust <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__, pipeline as pl
from .data import load_csv, read_matrix_csv
from .errors import ConfigError, DataError, ShapClustError
from .shap import ShapTensor

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _global_flags(p: argparse.ArgumentParser, top: bool) -> None:
    # subcommand copies default to SUPPRESS so a flag given before the
    # subcommand is not reset by the subparser
    default = None if top else argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=default, help="master seed")
    p.add_argument("--threads", type=int, default=default, help="worker cap for parallel loops")
    p.add_argument("--out", default=default, help="output directory")
    p.add_argument("--config", default=default, help="key=value config file")


def _gbt_flags(p):
    p.add_argument("--rounds", dest="gbt.rounds", type=int)
    p.add_argument("--eta", dest="gbt.eta", type=float)
    p.add_argument("--max-depth", dest="gbt.max_depth", type=int)
    p.add_argument("--lambda", dest="gbt.lambda", type=float)
    p.add_argument("--gamma", dest="gbt.gamma", type=float)
    p.add_argument("--min-child-weight", dest="gbt.min_child_weight", type=float)


def _data_flags(p):
    p.add_argument("--data", dest="data.source", help="input CSV")
    p.add_argument("--label", dest="data.label", help="label column (default: label)")
    p.add_argument("--scale", dest="data.scale", action="store_const", const=True,
                   help="min-max scale features to [0, 1]")


def _shap_flags(p):
    p.add_argument("--folds", dest="shap.folds", type=int)
    p.add_argument("--repeats", dest="shap.repeats", type=int)
    p.add_argument("--background", dest="shap.background", type=int)


def _embed_flags(p):
    p.add_argument("--method", dest="embed.method", choices=["pca", "neighbor"])
    p.add_argument("--neighbors", dest="embed.neighbors", type=int)
    p.add_argument("--min-dist", dest="embed.min_dist", type=float)
    p.add_argument("--epochs", dest="embed.epochs", type=int)


def _cluster_flags(p):
    p.add_argument("--min-cluster-size", dest="cluster.min_cluster_size", type=int)
    p.add_argument("--min-samples", dest="cluster.min_samples", type=int)
    p.add_argument("--selection", dest="cluster.selection", choices=["eom", "leaf"])


def _waterfall_flags(p):
    p.add_argument("--projection", dest="waterfall.projection",
                   help="pca (default) or pair:A,B for two class indices")
    p.add_argument("--top-m", dest="waterfall.top_m", type=int)


def _input_flags(p):
    p.add_argument("input", nargs="?", help="input CSV (same as --input)")
    p.add_argument("--input", dest="input_flag", metavar="CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shapclust", description="Supervised clustering with SHAP values.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    _global_flags(parser, top=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, top=False)
        return p

    p = add("simulate", "draw the three-class simulation (data.csv, beta.csv)")
    p.add_argument("--n", dest="simulate.n", type=int)

    p = add("train", "fit the boosted model and write held-out metrics")
    _data_flags(p)
    _gbt_flags(p)
    p.add_argument("--test-fraction", dest="split.test_fraction", type=float)
    p.add_argument("--model-out", help="model JSON path (default: <out>/model.json)")

    p = add("explain", "repeated out-of-fold SHAP tensor (shap.csv, base_values.csv)")
    _data_flags(p)
    _gbt_flags(p)
    _shap_flags(p)

    p = add("embed", "2-D embedding of a data CSV or a shap.csv")
    _input_flags(p)
    p.add_argument("--label", default="label")
    _embed_flags(p)

    p = add("cluster", "HDBSCAN on a shap.csv or coordinates file (clusters.csv)")
    _input_flags(p)
    p.add_argument("--cluster-on", dest="cluster.on", choices=["shap", "embedding"],
                   help="embedding: embed the input first (embed.* settings), then cluster")
    _cluster_flags(p)

    p = add("waterfall", "cluster-mean waterfall paths (paths.csv, waterfall.svg)")
    p.add_argument("--shap", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--clusters", required=True)
    _waterfall_flags(p)

    p = add("report", "render all SVG figures from a pipeline output directory")
    p.add_argument("dir", help="directory written by the pipeline")

    p = add("pipeline", "run every stage and write manifest.json")
    p.add_argument("--preset", choices=sorted(pl.PRESET_SEEDS))
    p.add_argument("--simulate", action="store_true", help="use the simulation as data source")
    p.add_argument("--n", dest="simulate.n", type=int)
    p.add_argument("--test-fraction", dest="split.test_fraction", type=float)
    p.add_argument("--cluster-on", dest="cluster.on", choices=["shap", "embedding"])
    _data_flags(p)
    _gbt_flags(p)
    _shap_flags(p)
    _embed_flags(p)
    _cluster_flags(p)
    _waterfall_flags(p)
    for sp in sub.choices.values():
        for action in sp._actions:
            # show --rounds ROUNDS rather than the dotted config key
            if "." in action.dest and action.metavar is None and not action.choices \
                    and action.nargs is None:
                action.metavar = action.dest.rsplit(".", 1)[1].upper()
    return parser


_NON_CONFIG = {"command", "verbose", "config", "preset", "input", "input_flag", "shap",
               "base", "clusters", "dir", "simulate", "model_out", "out"}


def _config(args, **forced) -> pl.PipelineConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    out = getattr(args, "out", None)
    if out is not None and not out.endswith(".csv"):
        overrides["out"] = out
    if getattr(args, "simulate", False):
        if overrides.get("data.source"):
            raise ConfigError("--simulate and --data are mutually exclusive")
        overrides["data.source"] = "simulate"
    overrides.update(forced)
    return pl.load_config(args.config, overrides, getattr(args, "preset", None))


def _dataset(cfg: pl.PipelineConfig):
    if cfg.source == "simulate":
        raise ConfigError("--data is required")
    d = load_csv(cfg.source, cfg.label)
    if d.labels is None:
        raise DataError("a label column is required")
    return pl.minmax_scale(d) if cfg.scale else d


def _matrix(path: str, label: str = "label") -> np.ndarray:
    """Feature matrix of a data CSV, or the values of a sample-indexed matrix CSV."""
    if not os.path.isfile(path):
        raise DataError(f"file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip().split(",")[0]
    if first == "sample":
        return read_matrix_csv(path)[0]
    d = load_csv(path, label if label in _header(path) else None)
    return d.features


def _input_path(args) -> str:
    if args.input and args.input_flag and args.input != args.input_flag:
        raise ConfigError("give the input file once")
    path = args.input or args.input_flag
    if not path:
        raise ConfigError("an input CSV is required")
    return path


def _output_file(args, cfg: pl.PipelineConfig, default_name: str) -> str:
    """``--out`` naming a .csv is the file itself; otherwise it is the directory."""
    out = getattr(args, "out", None)
    path = out if out and out.endswith(".csv") else os.path.join(cfg.out, default_name)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    return path


def _header(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return fh.readline().strip().split(",")


def _cmd_simulate(args):
    cfg = _config(args)
    os.makedirs(cfg.out, exist_ok=True)
    d = pl.stage_simulate(cfg.n, cfg.seed, cfg.out)
    print(f"simulated {d.n} samples -> {cfg.out}")


def _cmd_train(args):
    cfg = _config(args)
    os.makedirs(cfg.out, exist_ok=True)
    _, report = pl.stage_train(_dataset(cfg), cfg.gbt_config(), cfg.seed, cfg.test_fraction,
                               cfg.out, model_path=args.model_out)
    print(report.format(), end="")


def _cmd_explain(args):
    cfg = _config(args)
    os.makedirs(cfg.out, exist_ok=True)
    t = pl.stage_explain(_dataset(cfg), cfg.gbt_config(), cfg.shap_folds, cfg.shap_repeats,
                         cfg.shap_background, cfg.seed, cfg.out)
    print(f"SHAP tensor {t.n}x{t.p}x{t.k}; max additivity error "
          f"{max(t.run_additivity):.2e}")


def _cmd_embed(args):
    cfg = _config(args)
    e = pl.embed_matrix(_matrix(_input_path(args), args.label), cfg.embed_method,
                        cfg.embed_neighbors, cfg.embed_min_dist, cfg.embed_epochs, cfg.seed)
    path = _output_file(args, cfg, "coords.csv")
    pl.write_coords(path, e)
    print(f"{e.method} embedding -> {path}")


def _cmd_cluster(args):
    cfg = _config(args)
    m = _matrix(_input_path(args))
    if cfg.cluster_on == "embedding":
        m = pl.embed_matrix(m, cfg.embed_method, cfg.embed_neighbors, cfg.embed_min_dist,
                            cfg.embed_epochs, cfg.seed).coords
    res = pl.stage_cluster(m, cfg.cluster_min_cluster_size, cfg.cluster_min_samples,
                           cfg.cluster_selection, _output_file(args, cfg, "clusters.csv"))
    print(f"{res.n_clusters} clusters, noise fraction {res.noise_fraction:.3f}")


def _cmd_waterfall(args):
    cfg = _config(args)
    os.makedirs(cfg.out, exist_ok=True)
    t = ShapTensor.load(args.shap, args.base)
    paths, _ = pl.stage_waterfall(t, pl.read_clusters(args.clusters), cfg.waterfall_projection,
                                  cfg.waterfall_top_m, cfg.out)
    print(f"{len(paths)} paths -> {cfg.out}")


def _cmd_report(args):
    d, t, labels, raw, shap = pl.load_outputs(args.dir)
    out = args.out or args.dir
    os.makedirs(out, exist_ok=True)
    for path in pl.stage_report(d, t, labels, raw, shap, out):
        print(path)
    model = os.path.join(args.dir, "model.json")
    if os.path.isfile(model):
        cfg = pl.recorded_config(args.dir)
        report = pl.held_out_report(d, pl.Ensemble.load(model), cfg.seed, cfg.test_fraction)
        with open(os.path.join(out, "metrics.txt"), "w", encoding="utf-8") as fh:
            fh.write(report.format())
        print(os.path.join(out, "metrics.txt"))


def _cmd_pipeline(args):
    cfg = _config(args)
    out = pl.run_pipeline(cfg)
    print(open(os.path.join(out, "metrics.txt"), encoding="utf-8").read(), end="")
    print(f"outputs -> {out}")


COMMANDS = {
    "simulate": _cmd_simulate, "train": _cmd_train, "explain": _cmd_explain,
    "embed": _cmd_embed, "cluster": _cmd_cluster, "waterfall": _cmd_waterfall,
    "report": _cmd_report, "pipeline": _cmd_pipeline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.threads is not None:
            pl.set_threads(args.threads)
        COMMANDS[args.command](args)
    except ShapClustError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
