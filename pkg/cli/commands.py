"""Subcommands: census, build, train, eval, analyze, synth, cora and sweep.

Every command writes into ``--out`` and prints a short human summary on
stdout. All but ``synth`` and ``cora`` resolve the run config (defaults < config
file < flags) and write ``config.resolved`` next to their JSON artifacts.
Logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Mapping, Optional, Sequence

from core.analysis import analysis_payload, as_json, edge_retention
from core.config import effective_threads, load_config_file, resolve_config, write_resolved
from core.cora import convert_cora
from core.errors import ConfigError, EmptyGraphError, MotifGNNError, TrainingDivergedError
from core.graph import SPLITS, load_features, load_graph, load_labels
from core.metrics import MetricsReport, attention_report, plot_attention
from core.motifs import (
    brute_force_census,
    build_catalog,
    build_motif_adjacency,
    build_views,
    census_payload,
    enumerate_instances,
    save_motif_adjacency,
)
from core.snapshot import MODEL_KEYS, read_snapshot, load_snapshot, save_snapshot, save_state
from core.synth import SynthParams, generate, write_dataset
from core.trainer import evaluate, sweep, train, train_seeds

__all__ = ["APP_NAME", "APP_VERSION", "EXIT_OK", "EXIT_FAILURE", "EXIT_USAGE", "build_parser", "run"]

logger = logging.getLogger(__name__)

APP_NAME = "motifgnn"
APP_VERSION = "0.1.0"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

# flag dest -> config key
_OVERRIDES = {
    "buckets": "buckets",
    "encoder": "encoder",
    "input_dim": "input_dim",
    "hidden_dim": "hidden_dim",
    "att_dim": "att_dim",
    "layers": "layers",
    "head_dim": "head_dim",
    "motifs": "motifs",
    "semantics": "semantics",
    "aggregate": "aggregate",
    "variant": "variant",
    "dropout": "dropout",
    "lr": "lr",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "lambda_reg": "lambda_reg",
    "seed": "seed",
    "patience": "patience",
    "task": "task",
    "num_classes": "num_classes",
    "threads": "threads",
}

_ABLATIONS = {
    "plain-gat": {"variant": "plain-gat"},
    "no-gate": {"variant": "no-gate"},
    "no-curriculum": {"curriculum": False},
}


def _configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)-7s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logging.getLogger().setLevel(level)


def _require_file(path: Optional[str], flag: str) -> str:
    if not path:
        raise ConfigError(f"{flag} is required")
    if not os.path.isfile(path):
        raise ConfigError(f"{flag}: file not found: {path}")
    return path


def _resolve(args: argparse.Namespace, base: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    file_values: Dict[str, Any] = dict(base or {})
    if getattr(args, "config", None):
        file_values.update(load_config_file(_require_file(args.config, "--config")))
    overrides = {key: getattr(args, dest, None) for dest, key in _OVERRIDES.items()}
    for key, value in _ABLATIONS.get(getattr(args, "ablate", None) or "", {}).items():
        overrides[key] = value
    return resolve_config(file_values, overrides)


def _write_json(payload: Any, out_dir: str, name: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2)
        handle.write("\n")
    return path


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def _inputs(args: argparse.Namespace, config: Mapping[str, Any], need_features: bool = True):
    graph = load_graph(_require_file(args.graph, "--graph"))
    features = load_features(_require_file(args.features, "--features"), graph) if need_features else None
    labels = load_labels(_require_file(args.labels, "--labels"), graph, num_classes=int(config["num_classes"]))
    return graph, features, labels


def _views(graph, config: Mapping[str, Any], threads: int):
    motifs = config["motifs"]
    census = enumerate_instances(graph, threads=threads) if motifs else None
    return build_views(graph, census, motifs, semantics=config["semantics"], threads=threads)


def _paths(args: argparse.Namespace) -> Dict[str, str]:
    return {
        name: os.path.abspath(value)
        for name in ("graph", "features", "labels", "snapshot", "config")
        if (value := getattr(args, name, None))
    }


def cmd_census(args: argparse.Namespace) -> int:
    config = _resolve(args)
    threads = effective_threads(config)
    graph = load_graph(_require_file(args.graph, "--graph"))
    census = brute_force_census(graph) if args.brute_force else enumerate_instances(graph, threads=threads)
    retention = {}
    for triad in build_catalog():
        adjacency = build_motif_adjacency(graph, census, triad.index, config["semantics"])
        value = edge_retention(graph, adjacency)
        retention[triad.index] = as_json(value)["value"]
    payload = census_payload(graph, census, retention, include_participation=args.participation)
    payload["semantics"] = config["semantics"]
    _write_json(payload, args.out, "census.json")
    write_resolved(config, args.out, _paths(args))

    print(f"{'class':<12}{'instances':>12}{'retention':>12}")
    for entry in payload["classes"]:
        print(f"{'M%d:%s' % (entry['index'], entry['name']):<12}{entry['instance_count']:>12}{_fmt(entry['edge_retention']):>12}")
    print(f"{graph.n} nodes, {graph.m} edges, {census.total} connected triples")
    return EXIT_OK


def cmd_build(args: argparse.Namespace) -> int:
    config = _resolve(args)
    threads = effective_threads(config)
    graph = load_graph(_require_file(args.graph, "--graph"))
    views = _views(graph, config, threads)
    for adjacency in views[1:]:
        path = os.path.join(args.out, f"motif_{adjacency.index}.tsv")
        save_motif_adjacency(graph, adjacency, path)
        print(f"{adjacency.name:<12} retention {_fmt(as_json(edge_retention(graph, adjacency))['value'])}  -> {path}")
    write_resolved(config, args.out, _paths(args))
    return EXIT_OK


def _train_once(args, config, graph, views, features, labels, threads) -> MetricsReport:
    try:
        result = train(graph, views, features, labels, config, threads=threads)
    except TrainingDivergedError as exc:
        save_state(exc.last_good, config, os.path.join(args.out, "snapshot.last_good.json"), note=str(exc))
        raise
    save_snapshot(result.network, os.path.join(args.out, "snapshot.json"), feature_columns=features.columns)
    if args.plot:
        plot_attention(result.alpha, result.network.view_names, os.path.join(args.out, "attention.png"))
    return result.report


def _print_report(report: MetricsReport) -> None:
    for split in SPLITS:
        values = report.splits.get(split, {})
        print(
            f"{split:<6} n={values.get('count', 0):<6} accuracy={_fmt(values.get('accuracy'))} "
            f"auc={_fmt(values.get('auc'))} ks={_fmt(values.get('ks'))}"
        )
    for row in report.attention:
        print(f"  {row['view']:<12} mean attention {_fmt(row['mean'])}")


def cmd_train(args: argparse.Namespace) -> int:
    config = _resolve(args)
    threads = effective_threads(config)
    graph, features, labels = _inputs(args, config)
    views = _views(graph, config, threads)
    write_resolved(config, args.out, _paths(args))

    if args.seeds > 1:
        seeds = [int(config["seed"]) + offset for offset in range(args.seeds)]
        try:
            summary, results = train_seeds(graph, views, features, labels, config, seeds, threads=threads)
        except TrainingDivergedError as exc:
            save_state(exc.last_good, config, os.path.join(args.out, "snapshot.last_good.json"), note=str(exc))
            raise
        for seed, result in zip(seeds, results):
            save_snapshot(result.network, os.path.join(args.out, f"snapshot.seed{seed}.json"), feature_columns=features.columns)
        _write_json(summary.to_json(), args.out, "metrics.json")
        for key in ("accuracy", "auc", "ks"):
            mean, std = summary.mean[key], summary.std[key]
            print(f"{key:<9} {_fmt(mean)} +/- {_fmt(std)} over {len(seeds)} seeds")
        return EXIT_OK

    report = _train_once(args, config, graph, views, features, labels, threads)
    _write_json(report.to_json(), args.out, "metrics.json")
    _print_report(report)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    snapshot_path = _require_file(args.snapshot, "--snapshot")
    stored = read_snapshot(snapshot_path).get("config", {})
    config = _resolve(args, base={key: value for key, value in stored.items() if key in MODEL_KEYS})
    threads = effective_threads(config)
    graph, features, labels = _inputs(args, config)
    views = _views(graph, config, threads)
    network = load_snapshot(snapshot_path, config, features, labels, views[:1] if config["variant"] == "plain-gat" else views)
    splits, result = evaluate(network, network.edges(views[: len(network.view_indices)]), labels, threads=threads)
    chosen = SPLITS if args.split == "all" else (args.split,)
    report = MetricsReport.from_splits(
        {split: splits[split] for split in chosen},
        attention=attention_report(result.alpha.data, network.view_names),
        parameter_count=network.parameter_count(),
    )
    if args.split != "all":
        values = splits[args.split]
        report.accuracy, report.auc, report.ks = values.get("accuracy"), values.get("auc"), values.get("ks")
    _write_json(report.to_json(), args.out, "metrics.json")
    write_resolved(config, args.out, _paths(args))
    _print_report(report)
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    config = _resolve(args)
    threads = effective_threads(config)
    graph, _, labels = _inputs(args, config, need_features=False)
    views = _views(graph, config, threads)
    payload = analysis_payload(graph, views, labels)
    _write_json(payload, args.out, "analysis.json")
    write_resolved(config, args.out, _paths(args))

    print(f"{'view':<12}{'lift@1':>10}{'lift@2':>10}{'hetero':>10}{'retain':>10}")
    for entry in payload["views"]:
        print(
            f"{entry['name']:<12}{_fmt(entry['bad_rate_lift_order1']['value']):>10}"
            f"{_fmt(entry['bad_rate_lift_order2']['value']):>10}"
            f"{_fmt(entry['heterophily']['value']):>10}{_fmt(entry['edge_retention']['value']):>10}"
        )
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    params = SynthParams(
        n=args.n,
        edge_prob=args.edge_prob,
        seed_rate=args.seed_rate,
        triangles_per_seed=args.triangles_per_seed,
        background_triangles=args.background_triangles,
        signal=args.signal,
        base_rate=args.base_rate,
        feature_signal=args.feature_signal,
        seed=args.seed,
    )
    dataset = generate(params)
    paths = write_dataset(dataset, args.out)
    print(
        f"{dataset.graph.n} users, {dataset.graph.m} edges, default rate {dataset.labels.y.mean():.3f} "
        f"-> {', '.join(paths.values())}"
    )
    return EXIT_OK


def cmd_cora(args: argparse.Namespace) -> int:
    if not os.path.isdir(args.raw):
        raise ConfigError(f"--raw: directory not found: {args.raw}")
    paths = convert_cora(args.raw, args.out, train_ratio=args.train_ratio, seed=args.seed)
    print(f"Cora written -> {', '.join(paths.values())}")
    return EXIT_OK


def _int_list(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _resolve(args)
    threads = effective_threads(config)
    graph, features, labels = _inputs(args, config)
    views = _views(graph, config, threads)
    rows = sweep(graph, views, features, labels, config, args.hidden_dims, threads=threads)
    _write_json({"rows": rows}, args.out, "sweep.json")
    write_resolved(config, args.out, _paths(args))
    print(f"{'hidden':>8}{'params':>10}{'auc':>10}{'ks':>10}{'acc':>10}")
    for row in rows:
        print(
            f"{row['hidden_dim']:>8}{row['parameter_count']:>10}{_fmt(row['auc']):>10}"
            f"{_fmt(row['ks']):>10}{_fmt(row['accuracy']):>10}"
        )
    return EXIT_OK


def _add_output(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", default=".", help="output directory (default: current directory)")
    noise = parser.add_mutually_exclusive_group()
    noise.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    noise.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")


def _add_global(parser: argparse.ArgumentParser) -> None:
    _add_output(parser)
    parser.add_argument("--config", help="flat key=value config file; flags override it")
    parser.add_argument("--threads", type=int, help="worker threads (default: all cores)")


def _add_inputs(parser: argparse.ArgumentParser, features: bool = True) -> None:
    parser.add_argument("--graph", required=True, help="edge file: src<TAB>dst per line")
    if features:
        parser.add_argument("--features", required=True, help="feature CSV with an id column")
    parser.add_argument("--labels", required=True, help="label file: id<TAB>label<TAB>split per line")


def _add_model(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--motifs", help="comma separated motif indices, 'all' or 'none'")
    parser.add_argument("--semantics", choices=("pair_cooccurrence", "edge_preserving"))
    parser.add_argument("--aggregate", choices=("in", "out", "both"))
    parser.add_argument("--variant", choices=("full", "no-gate", "plain-gat"))
    parser.add_argument("--encoder", choices=("bucket", "passthrough"))
    parser.add_argument("--buckets", type=int)
    parser.add_argument("--input-dim", dest="input_dim", type=int)
    parser.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    parser.add_argument("--att-dim", dest="att_dim", type=int)
    parser.add_argument("--layers", type=int)
    parser.add_argument("--head-dim", dest="head_dim", type=int)
    parser.add_argument("--dropout", type=float)
    parser.add_argument("--task", choices=("binary", "multiclass"))
    parser.add_argument("--num-classes", dest="num_classes", type=int)


def _add_training(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lr", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--lambda-reg", dest="lambda_reg", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--ablate", choices=sorted(_ABLATIONS), help="train an ablated variant")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=APP_NAME, description="Motif-preserving graph attention for default prediction")
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    commands = parser.add_subparsers(dest="command", required=True)

    census = commands.add_parser("census", help="count the 13 triad classes")
    _add_global(census)
    census.add_argument("--graph", required=True)
    census.add_argument("--semantics", choices=("pair_cooccurrence", "edge_preserving"))
    census.add_argument("--brute-force", dest="brute_force", action="store_true", help="classify every node triple")
    census.add_argument("--participation", action="store_true", help="include per-node class counts")
    census.set_defaults(handler=cmd_census)

    build = commands.add_parser("build", help="write motif adjacency edge lists")
    _add_global(build)
    build.add_argument("--graph", required=True)
    build.add_argument("--motifs")
    build.add_argument("--semantics", choices=("pair_cooccurrence", "edge_preserving"))
    build.set_defaults(handler=cmd_build)

    train_cmd = commands.add_parser("train", help="train and evaluate a model")
    _add_global(train_cmd)
    _add_inputs(train_cmd)
    _add_model(train_cmd)
    _add_training(train_cmd)
    train_cmd.add_argument("--seeds", type=int, default=1, help="train seeds seed..seed+N-1 and report mean/std")
    train_cmd.add_argument("--plot", action="store_true", help="save an attention box plot")
    train_cmd.set_defaults(handler=cmd_train)

    eval_cmd = commands.add_parser("eval", help="evaluate a saved snapshot")
    _add_global(eval_cmd)
    _add_inputs(eval_cmd)
    _add_model(eval_cmd)
    eval_cmd.add_argument("--snapshot", required=True)
    eval_cmd.add_argument("--split", choices=("all",) + SPLITS, default="all")
    eval_cmd.set_defaults(handler=cmd_eval)

    analyze = commands.add_parser("analyze", help="bad-rate lift and heterophily per view")
    _add_global(analyze)
    _add_inputs(analyze, features=False)
    analyze.add_argument("--motifs")
    analyze.add_argument("--semantics", choices=("pair_cooccurrence", "edge_preserving"))
    analyze.add_argument("--num-classes", dest="num_classes", type=int)
    analyze.set_defaults(handler=cmd_analyze)

    synth = commands.add_parser("synth", help="generate a planted-triangle dataset")
    _add_output(synth)
    defaults = SynthParams()
    synth.add_argument("--n", type=int, default=defaults.n)
    synth.add_argument("--edge-prob", dest="edge_prob", type=float, default=defaults.edge_prob)
    synth.add_argument("--seed-rate", dest="seed_rate", type=float, default=defaults.seed_rate)
    synth.add_argument("--triangles-per-seed", dest="triangles_per_seed", type=int, default=defaults.triangles_per_seed)
    synth.add_argument("--background-triangles", dest="background_triangles", type=int, default=defaults.background_triangles)
    synth.add_argument("--signal", type=float, default=defaults.signal)
    synth.add_argument("--base-rate", dest="base_rate", type=float, default=defaults.base_rate)
    synth.add_argument("--feature-signal", dest="feature_signal", type=float, default=defaults.feature_signal)
    synth.add_argument("--seed", type=int, default=defaults.seed)
    synth.set_defaults(handler=cmd_synth)

    cora = commands.add_parser("cora", help="convert the raw Cora dataset")
    _add_output(cora)
    cora.add_argument("--raw", required=True, help="directory with cora.content and cora.cites")
    cora.add_argument("--train-ratio", dest="train_ratio", type=float, default=0.6)
    cora.add_argument("--seed", type=int, default=0)
    cora.set_defaults(handler=cmd_cora)

    sweep_cmd = commands.add_parser("sweep", help="train once per hidden size")
    _add_global(sweep_cmd)
    _add_inputs(sweep_cmd)
    _add_model(sweep_cmd)
    _add_training(sweep_cmd)
    sweep_cmd.add_argument("--hidden-dims", dest="hidden_dims", type=_int_list, default=[32, 64, 128])
    sweep_cmd.set_defaults(handler=cmd_sweep)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure_logging(args.verbose, args.quiet)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"{APP_NAME} {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EmptyGraphError as exc:
        print(f"{APP_NAME} {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except TrainingDivergedError as exc:
        print(f"{APP_NAME} {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (MotifGNNError, OSError) as exc:
        logger.debug("Command failed", exc_info=True)
        print(f"{APP_NAME} {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
